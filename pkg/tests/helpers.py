"""Small builders shared by the test modules."""
from __future__ import annotations

import random

from railguard.harness import RunConfig, run
from railguard.network import AttackDirective, AttackMode, Trigger
from railguard.protocol import SIGNALBOX, Channel, Kind, Message, PointState, SignalAspect, TdsState
from railguard.signalbox import RouteRequest
from railguard.stations import random_layout
from railguard.topology import ElementKind
from railguard.traffic import OccupancyEvent, RawCommand, RouteEvent

L, R = PointState.LEFT, PointState.RIGHT
CLEAR, STOP = SignalAspect.CLEAR, SignalAspect.STOP


def raw(time: int, dst: str, kind: Kind, arg) -> RawCommand:
    return RawCommand(time, Message(0, time, Channel.SAFETY, SIGNALBOX, dst, kind, arg))


def set_point(time: int, point: str, pos: PointState) -> RawCommand:
    return raw(time, point, Kind.SET_POINT, pos)


def set_signal(time: int, signal: str, aspect: SignalAspect) -> RawCommand:
    return raw(time, signal, Kind.SET_SIGNAL, aspect)


def occupy(time: int, tds: str) -> OccupancyEvent:
    return OccupancyEvent(time, tds, TdsState.OCCUPIED)


def release(time: int, tds: str) -> OccupancyEvent:
    return OccupancyEvent(time, tds, TdsState.CLEAR)


def route(time: int, entry: str, exit: str | None, **points: PointState) -> RouteEvent:
    return RouteEvent(time, RouteRequest(entry, exit, tuple(points.items())))


def simulate(t, events, directives=(), **config):
    return run(t, sorted(events, key=lambda e: e.time), directives, RunConfig(**config))


def wire(trace, kinds=None):
    """(src, dst, kind, arg) tuples, optionally filtered by kind."""
    return [(m.src, m.dst, m.kind.value, m.arg) for m in trace if kinds is None or m.kind in kinds]


def random_instance(seed: int, max_size: int = 12):
    """A small layout, raw commands spaced 2 s apart, and at most one directive."""
    rng = random.Random(seed)
    t = random_layout(seed, rng.randint(4, max_size))
    events = []
    for i in range(rng.randint(1, 10)):
        time = i * 2000
        e = rng.choice(t.ids)
        kind = t.kind(e)
        if kind is ElementKind.POINT:
            events.append(set_point(time, e, rng.choice([L, R])))
        elif kind is ElementKind.SIGNAL:
            events.append(set_signal(time, e, rng.choice([CLEAR, STOP])))
        else:
            events.append(OccupancyEvent(time, e, rng.choice(list(TdsState))))
    directives = []
    if rng.random() < 0.7:
        mode = rng.choice(list(AttackMode))
        targets = [n.id for n in t if n.kind in mode.target_kinds]
        if targets:
            if mode.is_drop:
                trigger = Trigger(rng.choice(["on_next_cmd", "occupied", "locked"]))
            else:
                # offset from the command grid so forged and genuine traffic never collide
                trigger = rng.choice([Trigger("at", 1000 + 2000 * rng.randint(0, 9)), Trigger("occupied"), Trigger("locked")])
            directives.append(AttackDirective(mode, rng.choice(targets), trigger))
    return t, events, directives
