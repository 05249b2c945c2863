"""Deterministic transport for both channels with a Dolev-Yao interposer.

The scheduler is the single serialization point of a run: every delivery,
timer and traffic event sits in one heap ordered by ``(time, insertion)``.
With a fixed per-hop latency this also gives per-(src, dst) FIFO order.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

from railguard.protocol import (
    SIGNALBOX,
    Arg,
    Channel,
    Kind,
    Message,
    PointState,
    QueryId,
    Reason,
    SignalAspect,
    TdsState,
    decode_arg,
)
from railguard.topology import ElementKind, Topology

log = logging.getLogger(__name__)


class Scheduler:
    def __init__(self):
        self.now = 0
        self._heap: list = []
        self._counter = itertools.count()

    def at(self, time: int, action: Callable, *args) -> None:
        if time < self.now:
            raise ValueError(f"cannot schedule in the past ({time} < {self.now})")
        heapq.heappush(self._heap, (time, next(self._counter), action, args))

    def after(self, delay: int, action: Callable, *args) -> None:
        self.at(self.now + delay, action, *args)

    def __len__(self) -> int:
        return len(self._heap)

    def run(self, after_event: Callable[[], None] | None = None) -> None:
        while self._heap:
            time, _, action, args = heapq.heappop(self._heap)
            self.now = time
            action(*args)
            if after_event is not None:
                after_event()


class ChannelViolation(Exception):
    """A message was offered on a channel its endpoints may not use."""


class AttackMode(enum.Enum):
    TDS_DROP = "TDS_DROP"
    TDS_INJECT = "TDS_INJECT"
    POINT_DROP = "POINT_DROP"
    POINT_INJECT = "POINT_INJECT"
    SIGNAL_DROP = "SIGNAL_DROP"
    SIGNAL_INJECT = "SIGNAL_INJECT"

    @property
    def is_drop(self) -> bool:
        return self.value.endswith("_DROP")

    @property
    def target_kinds(self) -> tuple[ElementKind, ...]:
        if self.value.startswith("TDS"):
            return (ElementKind.TRACK_SECTION_TDS, ElementKind.POINT_TDS)
        if self.value.startswith("POINT"):
            return (ElementKind.POINT,)
        return (ElementKind.SIGNAL,)


TRIGGERS = ("at", "occupied", "locked", "on_next_cmd")


@dataclass(frozen=True)
class Trigger:
    kind: str
    time: int | None = None

    def __post_init__(self):
        if self.kind not in TRIGGERS:
            raise ValueError(f"unknown trigger {self.kind!r}")
        if (self.kind == "at") != (self.time is not None):
            raise ValueError("'at' triggers need a time and only they take one")

    def __str__(self) -> str:
        return f"at={self.time}" if self.kind == "at" else f"when={self.kind}"


@dataclass(frozen=True)
class AttackDirective:
    mode: AttackMode
    target: str
    trigger: Trigger
    payload: tuple[Kind, Arg] | None = None

    def __str__(self) -> str:
        text = f"attack {self.mode.value} {self.target} {self.trigger}"
        if self.payload is not None:
            kind, arg = self.payload
            text += f" payload={kind.value}:{'-' if arg is None else (str(arg).upper() if isinstance(arg, bool) else arg.value)}"
        return text


_DIRECTIVE_RE = re.compile(
    r"^attack\s+(?P<mode>\w+)\s+(?P<target>\S+)\s+(?:at=(?P<at>\d+)|when=(?P<when>\w+))"
    r"(?:\s+payload=(?P<pkind>\w+):(?P<parg>\S+))?\s*$"
)


def parse_directives(text: str) -> list[AttackDirective]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _DIRECTIVE_RE.match(line)
        if not m:
            raise ValueError(f"line {lineno}: malformed attack directive {line!r}")
        try:
            mode = AttackMode(m["mode"])
            trigger = Trigger("at", int(m["at"])) if m["at"] is not None else Trigger(m["when"])
            payload = None
            if m["pkind"]:
                kind = Kind(m["pkind"])
                payload = (kind, decode_arg(kind, m["parg"]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        out.append(AttackDirective(mode, m["target"], trigger, payload))
    return out


class GroundTruth(Protocol):
    """What the attacker can observe about the field (it sees all traffic)."""

    def occupied(self, element: str) -> bool: ...

    def locked(self, element: str) -> bool: ...

    def point_state(self, point: str) -> PointState: ...


class DeliveryLog:
    """Append-only record of what happened to every message offered."""

    def __init__(self):
        self.entries: list[tuple[str, Message]] = []
        self.counts: Counter[str] = Counter()

    def record(self, event: str, m: Message) -> None:
        self.entries.append((event, m))
        self.counts[event] += 1

    def reconciles(self) -> bool:
        c = self.counts
        return c["offered"] == c["delivered"] + c["dropped"]


class _Armed:
    def __init__(self, directive: AttackDirective):
        self.directive = directive
        self.done = False
        self.pending = False


class Network:
    """Carries messages between the signal box and field elements.

    SECURITY traffic is authentic and always delivered; SAFETY traffic passes
    the attacker, who drops or injects according to ``directives``.
    """

    def __init__(
        self,
        topology: Topology,
        scheduler: Scheduler,
        latency_ms: int = 10,
        directives: Iterable[AttackDirective] = (),
        inject_delay_ms: int = 200,
    ):
        self.topology = topology
        self.scheduler = scheduler
        self.latency_ms = latency_ms
        self.inject_delay_ms = inject_delay_ms
        self.truth: GroundTruth | None = None
        self.trace: list[Message] = []
        self.log = DeliveryLog()
        self.delivery_hooks: list[Callable[[Message], None]] = []
        self._endpoints: dict[str, Callable[[Message], None]] = {}
        self._seq = itertools.count(1)
        self._armed = [_Armed(d) for d in directives]
        for a in self._armed:
            d = a.directive
            if d.target not in topology or topology.kind(d.target) not in d.mode.target_kinds:
                raise ValueError(f"directive target {d.target!r} is not a {d.mode.value.split('_')[0].lower()}")
            if not d.mode.is_drop and d.trigger.kind == "at":
                scheduler.at(d.trigger.time, self._fire, a)

    @property
    def now(self) -> int:
        return self.scheduler.now

    def register(self, element_id: str, handler: Callable[[Message], None]) -> None:
        self._endpoints[element_id] = handler

    # -- sending ---------------------------------------------------------------

    def send(
        self,
        src: str,
        dst: str,
        kind: Kind,
        arg: Arg = None,
        *,
        query: QueryId | None = None,
        reason: Reason | None = None,
    ) -> Message | None:
        """Offer a message; returns it, or ``None`` if the attacker dropped it."""
        self._check_route(src, dst, kind.channel)
        m = Message(next(self._seq), self.now, kind.channel, src, dst, kind, arg, query, reason)
        self.log.record("offered", m)
        if m.channel is Channel.SAFETY:
            if self._interpose(m):
                return None
        self._dispatch(m)
        return m

    def inject(self, src: str, dst: str, kind: Kind, arg: Arg = None) -> Message:
        """Place a forged SAFETY message in flight, claiming to come from ``src``."""
        if kind.channel is not Channel.SAFETY:
            raise ChannelViolation("the security channel is authenticated; nothing can be forged on it")
        self._check_route(src, dst, Channel.SAFETY)
        m = Message(next(self._seq), self.now, Channel.SAFETY, src, dst, kind, arg)
        self.log.record("offered", m)
        self.log.record("injected", m)
        self._dispatch(m)
        return m

    def _check_route(self, src: str, dst: str, channel: Channel) -> None:
        if channel is Channel.SECURITY:
            if src not in self.topology or dst not in self.topology.neighbours(src):
                raise ChannelViolation(f"no security channel between {src} and {dst}")
        elif (src == SIGNALBOX) == (dst == SIGNALBOX) or (src if dst == SIGNALBOX else dst) not in self.topology:
            raise ChannelViolation(f"safety channel only links the signal box to field elements ({src}->{dst})")

    def _dispatch(self, m: Message) -> None:
        self.trace.append(m)
        self.scheduler.after(self.latency_ms, self._deliver, m)

    def _deliver(self, m: Message) -> None:
        self.log.record("delivered", m)
        for hook in self.delivery_hooks:
            hook(m)
        handler = self._endpoints.get(m.dst)
        if handler is None:
            log.warning("no endpoint for %s", m.dst)
            return
        handler(m)

    # -- attacker --------------------------------------------------------------

    def _condition(self, d: AttackDirective) -> bool:
        if d.trigger.kind == "occupied":
            return self.truth is not None and self.truth.occupied(d.target)
        if d.trigger.kind == "locked":
            return self.truth is not None and self.truth.locked(d.target)
        if d.trigger.kind == "at":
            return self.now >= d.trigger.time
        return True

    @staticmethod
    def _drop_matches(d: AttackDirective, m: Message) -> bool:
        if d.mode is AttackMode.TDS_DROP:
            return m.kind is Kind.TDS_REPORT and m.src == d.target and m.arg is TdsState.OCCUPIED
        if d.mode is AttackMode.POINT_DROP:
            return m.kind is Kind.SET_POINT and m.dst == d.target
        if d.mode is AttackMode.SIGNAL_DROP:
            return m.kind is Kind.SET_SIGNAL and m.dst == d.target and m.arg is SignalAspect.STOP
        return False

    def _interpose(self, m: Message) -> bool:
        dropped = False
        for a in self._armed:
            d = a.directive
            if a.done:
                continue
            if d.mode.is_drop:
                if not dropped and self._drop_matches(d, m) and self._condition(d):
                    a.done = dropped = True
                    self.log.record("dropped", m)
                    self._forge_ack(d, m)
            elif d.trigger.kind == "on_next_cmd" and not a.pending:
                if m.kind.is_command and m.dst == d.target:
                    a.pending = True
                    self.scheduler.after(self.inject_delay_ms, self._fire, a)
        return dropped

    def _forge_ack(self, d: AttackDirective, m: Message) -> None:
        # the attacker answers in the element's name so the signal box is not alarmed
        if d.mode is AttackMode.POINT_DROP:
            self.inject(d.target, SIGNALBOX, Kind.POINT_ACK, m.arg)
        elif d.mode is AttackMode.SIGNAL_DROP:
            self.inject(d.target, SIGNALBOX, Kind.SIGNAL_ACK, SignalAspect.STOP)

    def poll(self) -> None:
        """Arm state-triggered inject directives; called after every event."""
        for a in self._armed:
            d = a.directive
            if a.done or a.pending or d.mode.is_drop or d.trigger.kind not in ("occupied", "locked"):
                continue
            if self._condition(d):
                a.pending = True
                self.scheduler.after(self.inject_delay_ms, self._fire, a)

    def _fire(self, a: _Armed) -> None:
        if a.done:
            return
        a.done = True
        d = a.directive
        kind, arg = d.payload if d.payload is not None else self._default_payload(d)
        if kind in (Kind.TDS_REPORT, Kind.POINT_ACK, Kind.SIGNAL_ACK):
            self.inject(d.target, SIGNALBOX, kind, arg)
        else:
            self.inject(SIGNALBOX, d.target, kind, arg)

    def _default_payload(self, d: AttackDirective) -> tuple[Kind, Arg]:
        if d.mode is AttackMode.TDS_INJECT:
            return Kind.TDS_REPORT, TdsState.CLEAR
        if d.mode is AttackMode.POINT_INJECT:
            current = self.truth.point_state(d.target) if self.truth is not None else PointState.LEFT
            return Kind.SET_POINT, current.other
        return Kind.SET_SIGNAL, SignalAspect.CLEAR
