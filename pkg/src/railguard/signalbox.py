"""Central interlocking: a mirror of the field, route setting and release.

The mirror is fed only by safety-channel traffic (acks and reports). The
attacker works by making it disagree with the field.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Mapping

from railguard.network import Network
from railguard.protocol import SIGNALBOX, Kind, Message, PointState, SignalAspect, TdsState
from railguard.topology import ElementKind, Route, Topology, find_route

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RouteRequest:
    entry: str
    exit: str | None
    points: tuple[tuple[str, PointState], ...] = ()

    def __post_init__(self):
        if self.entry == self.exit:
            raise ValueError("a route cannot end where it starts")

    @classmethod
    def from_route(cls, route: Route) -> "RouteRequest":
        return cls(route.entry, route.exit, route.points)

    def __str__(self) -> str:
        pts = "".join(f" {p}={s.value}" for p, s in self.points)
        return f"route {self.entry} {self.exit or '-'}{pts}"


class Phase(enum.Enum):
    SETTING_POINTS = "setting_points"
    CLEARING = "clearing"
    SET = "set"
    IN_USE = "in_use"
    CANCELLING = "cancelling"


@dataclass
class ActiveRoute:
    request: RouteRequest
    route: Route
    phase: Phase
    awaiting: dict[str, PointState]
    started: int
    entered: set[str] = field(default_factory=set)
    released: set[str] = field(default_factory=set)
    cancel_requested: bool = False


class SignalBox:
    def __init__(
        self,
        topology: Topology,
        net: Network,
        ack_timeout_ms: int = 5000,
        initial_points: Mapping[str, PointState] | None = None,
        default_point: PointState = PointState.RIGHT,
    ):
        self.topology = topology
        self.net = net
        self.ack_timeout_ms = ack_timeout_ms
        self.mirror: dict[str, PointState | SignalAspect | TdsState] = {}
        for node in topology:
            if node.kind is ElementKind.POINT:
                self.mirror[node.id] = (initial_points or {}).get(node.id, default_point)
            elif node.kind is ElementKind.SIGNAL:
                self.mirror[node.id] = SignalAspect.STOP
            else:
                self.mirror[node.id] = TdsState.CLEAR
        self.reserved: dict[str, str] = {}
        self.routes: dict[str, ActiveRoute] = {}
        # operator-facing log: (time, event, detail)
        self.events: list[tuple[int, str, str]] = []
        net.register(SIGNALBOX, self.receive)

    def _note(self, event: str, detail: str) -> None:
        self.events.append((self.net.now, event, detail))

    # -- route setting ----------------------------------------------------------

    def request_route(self, req: RouteRequest) -> tuple[bool, str]:
        route = find_route(self.topology, req.entry, req.exit, dict(req.points))
        if route is None:
            return self._reject(req, "no such route")
        if req.entry in self.routes or self.mirror.get(req.entry) is not SignalAspect.STOP:
            return self._reject(req, f"entry signal {req.entry} is in use")
        for s in route.sections:
            if self.mirror[s] is not TdsState.CLEAR:
                return self._reject(req, f"{s} is occupied")
            if s in self.reserved:
                return self._reject(req, f"{s} is reserved by the route from {self.reserved[s]}")
        for s in route.sections:
            self.reserved[s] = req.entry
        active = ActiveRoute(req, route, Phase.SETTING_POINTS, dict(route.points), self.net.now)
        self.routes[req.entry] = active
        self._note("route_requested", str(req))
        # every point on the path is commanded, even if the mirror already agrees
        for point, pos in route.points:
            self.net.send(SIGNALBOX, point, Kind.SET_POINT, pos)
        if not active.awaiting:
            self._clear_entry(active)
        self.net.scheduler.after(self.ack_timeout_ms, self._check_timeout, active)
        return True, "accepted"

    def _reject(self, req: RouteRequest, why: str) -> tuple[bool, str]:
        self._note("route_rejected", f"{req}: {why}")
        return False, why

    def _clear_entry(self, active: ActiveRoute) -> None:
        active.phase = Phase.CLEARING
        self.net.send(SIGNALBOX, active.request.entry, Kind.SET_SIGNAL, SignalAspect.CLEAR)

    def _check_timeout(self, active: ActiveRoute) -> None:
        if self.routes.get(active.request.entry) is not active:
            return
        if active.phase in (Phase.SETTING_POINTS, Phase.CLEARING):
            self._note("route_failed", f"{active.request}: no acknowledgement in {self.ack_timeout_ms} ms")
            self._release_all(active)

    def _release_all(self, active: ActiveRoute) -> None:
        for s in active.route.sections:
            if self.reserved.get(s) == active.request.entry:
                del self.reserved[s]
        self.routes.pop(active.request.entry, None)

    def cancel(self, entry: str) -> bool:
        active = self.routes.get(entry)
        if active is None or active.phase is Phase.IN_USE:
            self._note("cancel_refused", entry)
            return False
        if active.phase is Phase.SET:
            active.phase = Phase.CANCELLING
            self.net.send(SIGNALBOX, entry, Kind.SET_SIGNAL, SignalAspect.STOP)
        else:
            active.cancel_requested = True
        self._note("cancel", entry)
        return True

    def send_raw(self, dst: str, kind: Kind, arg) -> Message | None:
        """Emit a command without any validation (compromised signal box)."""
        return self.net.send(SIGNALBOX, dst, kind, arg)

    # -- safety-channel input ---------------------------------------------------

    def receive(self, m: Message) -> None:
        if m.src not in self.mirror:
            log.warning("report from unknown element %s ignored", m.src)
            return
        if m.kind in (Kind.POINT_ACK, Kind.SIGNAL_ACK, Kind.TDS_REPORT):
            self.mirror[m.src] = m.arg
        if m.kind is Kind.POINT_ACK:
            self._point_acked(m)
        elif m.kind is Kind.SIGNAL_ACK:
            self._signal_acked(m)
        elif m.kind is Kind.TDS_REPORT:
            self._tds_report(m)

    def _point_acked(self, m: Message) -> None:
        for active in list(self.routes.values()):
            if active.phase is Phase.SETTING_POINTS and active.awaiting.get(m.src) is m.arg:
                del active.awaiting[m.src]
                if not active.awaiting:
                    if active.cancel_requested:
                        self._note("route_cancelled", str(active.request))
                        self._release_all(active)
                    else:
                        self._clear_entry(active)

    def _signal_acked(self, m: Message) -> None:
        active = self.routes.get(m.src)
        if active is None:
            return
        if m.arg is SignalAspect.CLEAR and active.phase is Phase.CLEARING:
            active.phase = Phase.SET
            self._note("route_set", str(active.request))
            if active.cancel_requested:
                self.cancel(m.src)
        elif m.arg is SignalAspect.STOP and active.phase is Phase.CANCELLING:
            self._note("route_cancelled", str(active.request))
            self._release_all(active)

    def _tds_report(self, m: Message) -> None:
        for active in list(self.routes.values()):
            sections = active.route.sections
            if m.src not in sections:
                continue
            if m.arg is TdsState.OCCUPIED:
                active.entered.add(m.src)
                if m.src == sections[0] and active.phase is Phase.SET:
                    # replace the entry signal behind the train
                    active.phase = Phase.IN_USE
                    self.net.send(SIGNALBOX, active.request.entry, Kind.SET_SIGNAL, SignalAspect.STOP)
            elif m.src in active.entered:
                active.released.add(m.src)
                if self.reserved.get(m.src) == active.request.entry:
                    del self.reserved[m.src]
                if active.released >= set(sections):
                    self._note("route_released", str(active.request))
                    self.routes.pop(active.request.entry, None)
