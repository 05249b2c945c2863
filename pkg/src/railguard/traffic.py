"""Clean train traffic and the four attack scenarios built on top of it.

A schedule is a time-ordered list of events the harness replays: route
requests and cancellations go to the signal box, occupancy changes go to
the sections, raw commands model a compromised signal box.
"""
from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Union

from railguard.network import AttackDirective, AttackMode, Trigger
from railguard.protocol import (
    SIGNALBOX,
    Channel,
    Kind,
    Message,
    PointState,
    Reason,
    SignalAspect,
    TdsState,
    decode_record,
    encode_record,
)
from railguard.signalbox import RouteRequest
from railguard.topology import ElementKind, Route, Topology, enumerate_routes


class EmptyRouteSet(ValueError):
    """The layout offers no route to run trains on."""


class ScenarioInapplicable(ValueError):
    """The chosen element cannot host the requested scenario."""


# -- events --------------------------------------------------------------------

@dataclass(frozen=True)
class RouteEvent:
    time: int
    request: RouteRequest


@dataclass(frozen=True)
class CancelEvent:
    time: int
    signal: str


@dataclass(frozen=True)
class OccupancyEvent:
    time: int
    tds: str
    state: TdsState


@dataclass(frozen=True)
class RawCommand:
    """A command the signal box emits without validation."""

    time: int
    message: Message


Event = Union[RouteEvent, CancelEvent, OccupancyEvent, RawCommand]


def _order(e: Event) -> int:
    # at equal times: release before occupy so sections hand over cleanly
    if isinstance(e, OccupancyEvent):
        return 0 if e.state is TdsState.CLEAR else 1
    return 2


def sort_schedule(events: Iterable[Event]) -> list[Event]:
    return sorted(events, key=lambda e: (e.time, _order(e)))


def elements_of(e: Event) -> list[str]:
    if isinstance(e, RouteEvent):
        return [e.request.entry] + ([e.request.exit] if e.request.exit else []) + [p for p, _ in e.request.points]
    if isinstance(e, CancelEvent):
        return [e.signal]
    if isinstance(e, OccupancyEvent):
        return [e.tds]
    return [e.message.dst if e.message.src == SIGNALBOX else e.message.src]


# -- schedule file ---------------------------------------------------------------

_ROUTE_RE = re.compile(r"^route\s+(\S+)\s+(\S+)((?:\s+\w+=(?:LEFT|RIGHT))*)\s+at=(\d+)$")


def format_schedule(events: Iterable[Event]) -> str:
    out = []
    for e in events:
        if isinstance(e, RouteEvent):
            out.append(f"{e.request} at={e.time}")
        elif isinstance(e, CancelEvent):
            out.append(f"cancel {e.signal} {e.time}")
        elif isinstance(e, OccupancyEvent):
            out.append(f"{'occupy' if e.state is TdsState.OCCUPIED else 'release'} {e.tds} {e.time}")
        else:
            out.append(encode_record(e.message))
    return "\n".join(out) + "\n"


def parse_schedule(text: str) -> list[Event]:
    events: list[Event] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        try:
            if words[0] == "route":
                m = _ROUTE_RE.match(line)
                if not m:
                    raise ValueError("expected 'route <entry> <exit|-> [P=POS ...] at=<ms>'")
                pts = tuple(
                    (p, PointState(s)) for p, s in (w.split("=") for w in m[3].split())
                )
                events.append(RouteEvent(int(m[4]), RouteRequest(m[1], None if m[2] == "-" else m[2], pts)))
            elif words[0] in ("occupy", "release") and len(words) == 3:
                state = TdsState.OCCUPIED if words[0] == "occupy" else TdsState.CLEAR
                events.append(OccupancyEvent(int(words[2]), words[1], state))
            elif words[0] == "cancel" and len(words) == 3:
                events.append(CancelEvent(int(words[2]), words[1]))
            else:
                m = decode_record(line)
                if not m.kind.is_command or m.src != SIGNALBOX:
                    raise ValueError("raw records must be commands from the signal box")
                events.append(RawCommand(m.time, m))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return sort_schedule(events)


# -- clean traffic -----------------------------------------------------------------

@dataclass(frozen=True)
class TrafficConfig:
    dwell_ms: int = 2000
    approach_ms: int = 1000
    release_lag_ms: int = 500
    gap_ms: int = 500
    cancel_fraction: float = 0.05
    cancel_after_ms: int = 1500
    max_spacing_ms: int = 400
    # restrict sampling to routes from these entry signals (None: all)
    entries: tuple[str, ...] | None = None


@dataclass(frozen=True)
class TrainRun:
    route: Route
    request_time: int
    dwell_ms: int
    cancelled: bool = False

    def events(self, cfg: TrafficConfig) -> list[Event]:
        out: list[Event] = [RouteEvent(self.request_time, RouteRequest.from_route(self.route))]
        if self.cancelled:
            out.append(CancelEvent(self.request_time + cfg.cancel_after_ms, self.route.entry))
            return out
        enter = self.request_time + cfg.approach_ms
        for i, s in enumerate(self.route.sections):
            out.append(OccupancyEvent(enter + i * self.dwell_ms, s, TdsState.OCCUPIED))
            out.append(OccupancyEvent(enter + (i + 1) * self.dwell_ms + cfg.release_lag_ms, s, TdsState.CLEAR))
        return out

    def free_at(self, cfg: TrafficConfig) -> int:
        if self.cancelled:
            end = self.request_time + cfg.cancel_after_ms + cfg.release_lag_ms
        else:
            end = self.request_time + cfg.approach_ms + len(self.route.sections) * self.dwell_ms + cfg.release_lag_ms
        return end + cfg.gap_ms


def plan_runs(t: Topology, n_runs: int, seed: int, cfg: TrafficConfig = TrafficConfig()) -> list[TrainRun]:
    """Place ``n_runs`` trains so no two overlap on any section."""
    if n_runs < 0:
        raise ValueError("n_runs must be non-negative")
    routes = enumerate_routes(t)
    if cfg.entries is not None:
        routes = [r for r in routes if r.entry in cfg.entries]
    if not routes:
        raise EmptyRouteSet("layout has no routes")
    if n_runs == 0:
        return []
    rng = random.Random(seed)
    n_cancel = math.ceil(cfg.cancel_fraction * n_runs)
    cancelled = set(rng.sample(range(n_runs), n_cancel)) if n_cancel else set()
    free: dict[str, int] = {}
    cursor = 0
    runs = []
    for i in range(n_runs):
        route = rng.choice(routes)
        start = max([cursor] + [free.get(s, 0) for s in route.sections])
        run = TrainRun(route, start, cfg.dwell_ms, i in cancelled)
        until = run.free_at(cfg)
        for s in route.sections:
            free[s] = until
        runs.append(run)
        cursor = start + rng.randint(1, cfg.max_spacing_ms)
    return runs


def generate_traffic(t: Topology, n_runs: int, seed: int, cfg: TrafficConfig = TrafficConfig()) -> list[Event]:
    events: list[Event] = []
    for run in plan_runs(t, n_runs, seed, cfg):
        events.extend(run.events(cfg))
    return sort_schedule(events)


# -- scenarios ----------------------------------------------------------------------

SCENARIO_MODES = {
    "S1": (AttackMode.POINT_INJECT,),
    "S2": (AttackMode.POINT_DROP, AttackMode.POINT_INJECT),
    "S3A": (AttackMode.TDS_DROP, AttackMode.TDS_INJECT),
    "S3B": (AttackMode.SIGNAL_DROP, AttackMode.SIGNAL_INJECT),
}


@dataclass(frozen=True)
class Scenario:
    id: str
    variant: str
    target: str
    directives: tuple[AttackDirective, ...]
    schedule: tuple[Event, ...]
    expected_element: str
    expected_reason: Reason
    initial_points: dict[str, PointState] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        allowed = SCENARIO_MODES[self.id]
        if any(d.mode not in allowed for d in self.directives):
            raise ValueError(f"{self.id} may only use {[m.value for m in allowed]}")

    @property
    def name(self) -> str:
        return f"{self.id}/{self.variant}/{self.target}"


_CFG = TrafficConfig()
_T0 = 1000


def _run_events(route: Route, at: int) -> list[Event]:
    return TrainRun(route, at, _CFG.dwell_ms).events(_CFG)


def _routes_over(t: Topology, element: str) -> list[Route]:
    out = []
    for r in enumerate_routes(t):
        if element in r.sections or element in r.point_map:
            out.append(r)
    return out


def _first_point_in(route: Route, t: Topology, sections: set[str]) -> str | None:
    for s in route.sections:
        if s in sections and t.kind(s) is ElementKind.POINT_TDS:
            return t[s]["point"]
    return None


def _entry_side(t: Topology, route: Route, tds: str) -> str:
    i = route.sections.index(tds)
    return route.sections[i - 1] if i > 0 else route.entry


def scenario_s1(t: Topology, point: str) -> Scenario:
    """Switch a point while a train is running over it."""
    routes = _routes_over(t, point)
    if not routes:
        raise ScenarioInapplicable(f"no route runs over {point}")
    d = AttackDirective(AttackMode.POINT_INJECT, point, Trigger("occupied"))
    return Scenario("S1", "inject", point, (d,), tuple(_run_events(routes[0], _T0)), point, Reason.OCCUPIED)


def scenario_s2(t: Topology, point: str, facing: bool) -> Scenario:
    """Suppress a point command and forge its ack, then send a train over it."""
    tds = t[point]["tds"]
    candidates = [
        r for r in _routes_over(t, point)
        if (_entry_side(t, r, tds) == t[tds]["pred_a"]) == facing
    ]
    if not candidates:
        raise ScenarioInapplicable(f"no {'facing' if facing else 'trailing'} route over {point}")
    route = candidates[0]
    wanted = route.point_map[point]
    events: list[Event] = [RouteEvent(_T0 + 1000, RouteRequest.from_route(route))]
    reason = Reason.POINT_POSITION_MISMATCH
    if facing:
        # the point still leads onto the other branch; put a train there
        branch = t[tds]["succ_c" if wanted is PointState.RIGHT else "succ_b"]
        if branch is None or not t.kind(branch).is_tds:
            raise ScenarioInapplicable(f"{point}'s other branch has no section to occupy")
        events.insert(0, OccupancyEvent(_T0, branch, TdsState.OCCUPIED))
        reason = Reason.OCCUPIED
    d = AttackDirective(AttackMode.POINT_DROP, point, Trigger("on_next_cmd"))
    return Scenario(
        "S2", "facing" if facing else "trailing", point, (d,), tuple(events), route.entry, reason,
        {point: wanted.other},
    )


def scenario_s3a(t: Topology, tds: str, mode: AttackMode) -> Scenario:
    """Hide an occupied section from the signal box, then route over it."""
    routes = _routes_over(t, tds)
    if not routes:
        raise ScenarioInapplicable(f"no route runs over {tds}")
    route = routes[0]
    d = AttackDirective(mode, tds, Trigger("occupied"))
    events = [OccupancyEvent(_T0, tds, TdsState.OCCUPIED), RouteEvent(_T0 + 1000, RouteRequest.from_route(route))]
    point = _first_point_in(route, t, {tds})
    expected = point if point is not None else route.entry
    variant = "drop" if mode is AttackMode.TDS_DROP else "inject"
    return Scenario("S3A", variant, tds, (d,), tuple(events), expected, Reason.OCCUPIED)


def scenario_s3b_inject(t: Topology, signal: str) -> Scenario:
    """Clear a signal in front of a standing train."""
    succ = t[signal]["succ"]
    if succ is None:
        raise ScenarioInapplicable(f"{signal} protects no section")
    d = AttackDirective(AttackMode.SIGNAL_INJECT, signal, Trigger("occupied"))
    return Scenario(
        "S3B", "inject", signal, (d,), (OccupancyEvent(_T0, succ, TdsState.OCCUPIED),), signal, Reason.OCCUPIED
    )


def scenario_s3b_drop(t: Topology, signal: str) -> Scenario:
    """Swallow a route cancellation so its sections look free, then route across them."""
    for first in (r for r in enumerate_routes(t) if r.entry == signal):
        shared = set(first.sections)
        for second in enumerate_routes(t):
            if second.entry != signal and shared & set(second.sections):
                d = AttackDirective(AttackMode.SIGNAL_DROP, signal, Trigger("on_next_cmd"))
                # after the second route times out the operator replaces the
                # stuck signal by hand, which frees the orphaned reservation
                restore = Message(0, _T0 + 9000, Channel.SAFETY, SIGNALBOX, signal, Kind.SET_SIGNAL, SignalAspect.STOP)
                events = (
                    RouteEvent(_T0, RouteRequest.from_route(first)),
                    CancelEvent(_T0 + 1000, signal),
                    RouteEvent(_T0 + 2000, RouteRequest.from_route(second)),
                    RawCommand(restore.time, restore),
                )
                point = _first_point_in(second, t, shared)
                expected = point if point is not None else second.entry
                return Scenario("S3B", "drop", signal, (d,), events, expected, Reason.LOCKED)
    raise ScenarioInapplicable(f"no route conflicts with a route from {signal}")


def build_scenarios(t: Topology, scenario_id: str | None = None) -> list[Scenario]:
    """Every applicable instance of the chosen scenario (all four when ``None``)."""
    wanted = [scenario_id] if scenario_id else list(SCENARIO_MODES)
    out: list[Scenario] = []

    def attempt(fn, *args):
        try:
            out.append(fn(t, *args))
        except ScenarioInapplicable:
            pass

    points = t.of_kind(ElementKind.POINT)
    sections = t.of_kind(ElementKind.TRACK_SECTION_TDS, ElementKind.POINT_TDS)
    signals = t.of_kind(ElementKind.SIGNAL)
    for sid in wanted:
        if sid == "S1":
            for p in points:
                attempt(scenario_s1, p)
        elif sid == "S2":
            for p in points:
                attempt(scenario_s2, p, False)
                attempt(scenario_s2, p, True)
        elif sid == "S3A":
            for s in sections:
                attempt(scenario_s3a, s, AttackMode.TDS_DROP)
                attempt(scenario_s3a, s, AttackMode.TDS_INJECT)
        elif sid == "S3B":
            for s in signals:
                attempt(scenario_s3b_inject, s)
                attempt(scenario_s3b_drop, s)
        else:
            raise ValueError(f"unknown scenario {sid!r}")
    return out
