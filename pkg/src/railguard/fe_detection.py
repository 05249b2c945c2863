"""Field-element controllers running the distributed anomaly detection.

Each controller owns one element's live state and reacts to one message at
a time. Queries travel hop by hop over the security channel; responses are
relayed back the same way, so the entry signal learns the verdict last.
"""
from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from railguard.network import ChannelViolation, Network
from railguard.protocol import (
    SIGNALBOX,
    Kind,
    Message,
    PointState,
    QueryId,
    Reason,
    SignalAspect,
    TdsState,
)
from railguard.topology import PRED_SLOTS, ElementKind, Topology, TopologyNode, next_hop


@dataclass
class FieldElementState:
    id: str
    kind: ElementKind
    point_state: PointState | None = None
    aspect: SignalAspect | None = None
    tds_state: TdsState | None = None
    locked: bool | None = None
    lock_pred: str | None = None
    lock_succ: str | None = None
    occupied_since_clear: bool | None = None
    # query that took the lock (TDS kinds); kept after occupancy for unlocking
    lock_query: QueryId | None = None

    @classmethod
    def initial(cls, node: TopologyNode, point_state: PointState = PointState.RIGHT) -> "FieldElementState":
        if node.kind is ElementKind.POINT:
            return cls(node.id, node.kind, point_state=point_state)
        if node.kind is ElementKind.SIGNAL:
            return cls(node.id, node.kind, aspect=SignalAspect.STOP, occupied_since_clear=False)
        return cls(node.id, node.kind, tds_state=TdsState.CLEAR, locked=False)


@dataclass(frozen=True)
class Alert:
    element: str
    time: int
    rejected_command: Message
    reason: Reason


@dataclass
class Journal:
    """Observable outcomes of a run, shared by all controllers."""

    alerts: list[Alert] = field(default_factory=list)
    executed: list[tuple[int, str, Message]] = field(default_factory=list)
    # (command, query) for every detection algorithm start
    triggers: list[tuple[Message, QueryId]] = field(default_factory=list)
    on_execute: list[Callable[[str, Message, QueryId | None], None]] = field(default_factory=list)

    def execute(self, time: int, element: str, cmd: Message, query: QueryId | None) -> None:
        self.executed.append((time, element, cmd))
        for hook in self.on_execute:
            hook(element, cmd, query)


# -- pure decision functions ---------------------------------------------------

def track_section_decision(
    node: TopologyNode, state: TdsState, locked: bool, src: str
) -> tuple[bool, bool, str | None]:
    """One step of the plain-section check.

    Returns ``(passes, takes_lock, forward_to)``; ``forward_to`` is ``None``
    when the query terminates here with ``passes``.
    """
    if state is not TdsState.CLEAR or locked:
        return False, False, None
    ok, nxt = next_hop(node, src, None)
    return ok, True, nxt if ok else None


def point_section_decision(
    node: TopologyNode, state: TdsState, locked: bool, src: str, point: PointState
) -> tuple[bool, bool, str | None]:
    """Same as :func:`track_section_decision` for a section with a point."""
    if state is not TdsState.CLEAR or locked:
        return False, False, None
    ok, nxt = next_hop(node, src, point)
    return ok, True, nxt if ok else None


# -- controllers ---------------------------------------------------------------

class Controller:
    def __init__(self, node: TopologyNode, topology: Topology, net: Network, journal: Journal, detection: bool):
        self.node = node
        self.id = node.id
        self.topology = topology
        self.net = net
        self.journal = journal
        self.detection = detection
        self.state = FieldElementState.initial(node)
        net.register(self.id, self.receive)

    def snapshot(self) -> FieldElementState:
        return copy.copy(self.state)

    def receive(self, m: Message) -> None:
        raise NotImplementedError

    def _send(self, dst: str, kind: Kind, arg=None, query: QueryId | None = None, reason: Reason | None = None):
        return self.net.send(self.id, dst, kind, arg, query=query, reason=reason)

    def _alert(self, cmd: Message, reason: Reason) -> None:
        self.journal.alerts.append(Alert(self.id, self.net.now, cmd, reason))


class _CommandQueue:
    """Commands arriving while a check is pending wait their turn."""

    def __init__(self):
        self.pending: tuple[Message, QueryId] | None = None
        self.backlog: deque[Message] = deque()


class PointController(Controller):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.queue = _CommandQueue()

    def receive(self, m: Message) -> None:
        if m.kind is Kind.SET_POINT:
            if self.queue.pending is not None:
                self.queue.backlog.append(m)
            else:
                self._start(m)
        elif m.kind is Kind.CAN_SWITCH_RESP:
            self._finish(m)
        elif m.kind is Kind.GET_STATE_REQ:
            self._send(m.src, Kind.GET_STATE_RESP, self.state.point_state, query=m.query)

    def _start(self, cmd: Message) -> None:
        q = QueryId(self.id, cmd.seq)
        self.journal.triggers.append((cmd, q))
        self.queue.pending = (cmd, q)
        try:
            self._send(self.node["tds"], Kind.CAN_SWITCH_REQ, query=q)
        except ChannelViolation:
            # no way to ask: fail safe
            self._conclude(cmd, q, False, Reason.NOT_NEIGHBOUR)

    def _finish(self, m: Message) -> None:
        if self.queue.pending is None or self.queue.pending[1] != m.query:
            return
        cmd, q = self.queue.pending
        self._conclude(cmd, q, m.arg, m.reason)

    def _conclude(self, cmd: Message, q: QueryId, ok: bool, reason: Reason | None) -> None:
        self.queue.pending = None
        if ok or not self.detection:
            self.state.point_state = cmd.arg
            self.journal.execute(self.net.now, self.id, cmd, q)
            self._send(SIGNALBOX, Kind.POINT_ACK, cmd.arg)
        else:
            self._alert(cmd, reason or Reason.OCCUPIED)
        if self.queue.backlog:
            self._start(self.queue.backlog.popleft())


class SignalController(Controller):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.queue = _CommandQueue()
        self.route_query: QueryId | None = None

    def receive(self, m: Message) -> None:
        if m.kind is Kind.SET_SIGNAL:
            if self.queue.pending is not None:
                self.queue.backlog.append(m)
            else:
                self._command(m)
        elif m.kind is Kind.IS_AVAILABLE_RESP:
            self._finish(m)
        elif m.kind is Kind.IS_AVAILABLE_REQ:
            self._answer_as_exit(m)
        elif m.kind is Kind.GET_STATE_RESP and m.arg is TdsState.OCCUPIED:
            if m.src == self.node["succ"]:
                self.state.occupied_since_clear = True

    def _answer_as_exit(self, m: Message) -> None:
        # a query reaching a signal from behind ends here: the route is complete
        sender = self.topology[m.src]
        if sender.kind.is_tds and self.id in (sender.slots.get(s) for s in ("succ_a", "succ_b", "succ_c")):
            self._send(m.src, Kind.IS_AVAILABLE_RESP, True, query=m.query)
        else:
            self._send(m.src, Kind.IS_AVAILABLE_RESP, False, query=m.query, reason=Reason.NOT_NEIGHBOUR)
            self._alert(m, Reason.NOT_NEIGHBOUR)

    def _command(self, cmd: Message) -> None:
        if cmd.arg is SignalAspect.STOP:
            self._stop(cmd)
            return
        if self.state.aspect is SignalAspect.CLEAR:
            # re-clear of a set route: nothing new to reserve
            self.journal.execute(self.net.now, self.id, cmd, None)
            self._send(SIGNALBOX, Kind.SIGNAL_ACK, SignalAspect.CLEAR)
            self._drain()
            return
        q = QueryId(self.id, cmd.seq)
        self.journal.triggers.append((cmd, q))
        succ = self.node["succ"]
        if succ is None:
            self._conclude(cmd, q, False, Reason.NO_ROUTE)
            return
        self.queue.pending = (cmd, q)
        self._send(succ, Kind.IS_AVAILABLE_REQ, query=q)

    def _finish(self, m: Message) -> None:
        if self.queue.pending is None or self.queue.pending[1] != m.query:
            return
        cmd, q = self.queue.pending
        self.queue.pending = None
        self._conclude(cmd, q, m.arg, m.reason)

    def _conclude(self, cmd: Message, q: QueryId, ok: bool, reason: Reason | None) -> None:
        if ok or not self.detection:
            self.state.aspect = SignalAspect.CLEAR
            self.state.occupied_since_clear = False
            self.route_query = q if ok else None
            self.journal.execute(self.net.now, self.id, cmd, q)
            self._send(SIGNALBOX, Kind.SIGNAL_ACK, SignalAspect.CLEAR)
        else:
            self._alert(cmd, reason or Reason.LOCKED)
        self._drain()

    def _stop(self, cmd: Message) -> None:
        was_clear = self.state.aspect is SignalAspect.CLEAR
        self.state.aspect = SignalAspect.STOP
        self.journal.execute(self.net.now, self.id, cmd, None)
        self._send(SIGNALBOX, Kind.SIGNAL_ACK, SignalAspect.STOP)
        if was_clear and not self.state.occupied_since_clear and self.route_query is not None:
            self._send(self.node["succ"], Kind.UNLOCK, query=self.route_query)
        self.route_query = None
        self._drain()

    def _drain(self) -> None:
        if self.queue.backlog and self.queue.pending is None:
            self._command(self.queue.backlog.popleft())


class TdsController(Controller):
    """Plain track sections and point sections share the locking protocol."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._awaiting_point = False

    @property
    def is_point(self) -> bool:
        return self.node.kind is ElementKind.POINT_TDS

    def receive(self, m: Message) -> None:
        if m.kind is Kind.IS_AVAILABLE_REQ:
            self._query(m)
        elif m.kind is Kind.IS_AVAILABLE_RESP:
            self._relay(m)
        elif m.kind is Kind.CAN_SWITCH_REQ and self.is_point and m.src == self.node["point"]:
            self._can_switch(m)
        elif m.kind is Kind.GET_STATE_RESP and self.is_point and m.src == self.node["point"]:
            self._point_state_known(m)
        elif m.kind is Kind.UNLOCK:
            self._unlock(m.query)

    def _respond(self, dst: str, ok: bool, q: QueryId, reason: Reason | None = None) -> None:
        self._send(dst, Kind.IS_AVAILABLE_RESP, ok, query=q, reason=None if ok else reason)

    def _release(self) -> None:
        self.state.locked = False
        self.state.lock_pred = None
        self.state.lock_succ = None
        self.state.lock_query = None
        self._awaiting_point = False

    def _can_switch(self, m: Message) -> None:
        s = self.state
        if s.tds_state is TdsState.OCCUPIED:
            self._send(m.src, Kind.CAN_SWITCH_RESP, False, query=m.query, reason=Reason.OCCUPIED)
        elif s.locked:
            self._send(m.src, Kind.CAN_SWITCH_RESP, False, query=m.query, reason=Reason.LOCKED)
        else:
            self._send(m.src, Kind.CAN_SWITCH_RESP, True, query=m.query)

    def _query(self, m: Message) -> None:
        s = self.state
        if m.src not in (self.node.slots.get(p) for p in PRED_SLOTS):
            self._respond(m.src, False, m.query, Reason.NOT_NEIGHBOUR)
            self._alert(m, Reason.NOT_NEIGHBOUR)
            return
        if s.tds_state is TdsState.OCCUPIED:
            self._respond(m.src, False, m.query, Reason.OCCUPIED)
            return
        if s.locked:
            self._respond(m.src, False, m.query, Reason.LOCKED)
            return
        s.locked = True
        s.lock_pred = m.src
        s.lock_succ = None
        self.state.lock_query = m.query
        if self.is_point:
            self._awaiting_point = True
            self._send(self.node["point"], Kind.GET_STATE_REQ, query=m.query)
            return
        ok, _, nxt = track_section_decision(self.node, TdsState.CLEAR, False, m.src)
        self._advance(ok, nxt, Reason.POINT_POSITION_MISMATCH)

    def _point_state_known(self, m: Message) -> None:
        if not self._awaiting_point or m.query != self.state.lock_query:
            return
        self._awaiting_point = False
        ok, _, nxt = point_section_decision(
            self.node, TdsState.CLEAR, False, self.state.lock_pred, m.arg
        )
        self._advance(ok, nxt, Reason.POINT_POSITION_MISMATCH)

    def _advance(self, ok: bool, nxt: str | None, reason: Reason) -> None:
        pred, q = self.state.lock_pred, self.state.lock_query
        if not ok:
            self._release()
            self._respond(pred, False, q, reason)
        elif nxt is None:
            self._respond(pred, True, q)
        else:
            self.state.lock_succ = nxt
            self._send(nxt, Kind.IS_AVAILABLE_REQ, query=q)

    def _relay(self, m: Message) -> None:
        if m.query != self.state.lock_query or m.src != self.state.lock_succ:
            return
        pred, q = self.state.lock_pred, self.state.lock_query
        if not m.arg:
            # the rejection travels back and each hop gives up its lock
            self._release()
        self._respond(pred, m.arg, q, m.reason)

    def _unlock(self, q: QueryId | None) -> None:
        if q is None or q != self.state.lock_query:
            return
        nxt = self.state.lock_succ
        self._release()
        if nxt is not None and self.topology.kind(nxt).is_tds:
            self._send(nxt, Kind.UNLOCK, query=q)

    def set_occupancy(self, new: TdsState) -> None:
        s = self.state
        if s.tds_state is new:
            return
        s.tds_state = new
        if new is TdsState.OCCUPIED:
            # the train now protects the section; the path record stays so a
            # later unlock can still find its way downstream
            s.locked = False
            self._send(SIGNALBOX, Kind.TDS_REPORT, TdsState.OCCUPIED)
            for signal in self.topology.signals_feeding(self.id):
                self._send(signal, Kind.GET_STATE_RESP, TdsState.OCCUPIED)
        else:
            self._send(SIGNALBOX, Kind.TDS_REPORT, TdsState.CLEAR)


def build_controllers(
    topology: Topology,
    net: Network,
    journal: Journal,
    detection: bool = True,
    initial_points: dict[str, PointState] | None = None,
) -> dict[str, Controller]:
    classes = {
        ElementKind.POINT: PointController,
        ElementKind.SIGNAL: SignalController,
        ElementKind.TRACK_SECTION_TDS: TdsController,
        ElementKind.POINT_TDS: TdsController,
    }
    controllers: dict[str, Controller] = {}
    for node in topology:
        c = classes[node.kind](node, topology, net, journal, detection)
        if node.kind is ElementKind.POINT and initial_points and node.id in initial_points:
            c.state.point_state = initial_points[node.id]
        controllers[node.id] = c
    return controllers
