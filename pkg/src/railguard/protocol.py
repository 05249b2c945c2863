"""Message vocabulary for the safety and security channels, plus the trace codec."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, TextIO, Union

SIGNALBOX = "SB"
TRACE_HEADER = "#railguard-trace v1"


class PointState(enum.Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"

    @property
    def other(self) -> "PointState":
        return PointState.RIGHT if self is PointState.LEFT else PointState.LEFT


class SignalAspect(enum.Enum):
    STOP = "STOP"
    CLEAR = "CLEAR"


class TdsState(enum.Enum):
    CLEAR = "CLEAR"
    OCCUPIED = "OCCUPIED"


class Channel(enum.Enum):
    SAFETY = "SAFETY"
    SECURITY = "SECURITY"


class Kind(enum.Enum):
    SET_POINT = "SET_POINT"
    SET_SIGNAL = "SET_SIGNAL"
    POINT_ACK = "POINT_ACK"
    SIGNAL_ACK = "SIGNAL_ACK"
    TDS_REPORT = "TDS_REPORT"
    IS_AVAILABLE_REQ = "IS_AVAILABLE_REQ"
    IS_AVAILABLE_RESP = "IS_AVAILABLE_RESP"
    CAN_SWITCH_REQ = "CAN_SWITCH_REQ"
    CAN_SWITCH_RESP = "CAN_SWITCH_RESP"
    GET_STATE_REQ = "GET_STATE_REQ"
    GET_STATE_RESP = "GET_STATE_RESP"
    UNLOCK = "UNLOCK"

    @property
    def channel(self) -> Channel:
        return Channel.SAFETY if self in _SAFETY_KINDS else Channel.SECURITY

    @property
    def is_command(self) -> bool:
        return self in (Kind.SET_POINT, Kind.SET_SIGNAL)


_SAFETY_KINDS = frozenset({Kind.SET_POINT, Kind.SET_SIGNAL, Kind.POINT_ACK, Kind.SIGNAL_ACK, Kind.TDS_REPORT})


class Reason(enum.Enum):
    """Why a detection check answered false."""

    OCCUPIED = "OCCUPIED"
    LOCKED = "LOCKED"
    POINT_POSITION_MISMATCH = "POINT_POSITION_MISMATCH"
    NO_ROUTE = "NO_ROUTE"
    NOT_NEIGHBOUR = "NOT_NEIGHBOUR"


Arg = Union[PointState, SignalAspect, TdsState, bool, None]

# GET_STATE_RESP carries a point position when answering a TDS, and a
# section state when a TDS notifies its entry signal of occupancy.
ARG_TYPES: dict[Kind, tuple[type, ...]] = {
    Kind.SET_POINT: (PointState,),
    Kind.SET_SIGNAL: (SignalAspect,),
    Kind.POINT_ACK: (PointState,),
    Kind.SIGNAL_ACK: (SignalAspect,),
    Kind.TDS_REPORT: (TdsState,),
    Kind.IS_AVAILABLE_REQ: (),
    Kind.IS_AVAILABLE_RESP: (bool,),
    Kind.CAN_SWITCH_REQ: (),
    Kind.CAN_SWITCH_RESP: (bool,),
    Kind.GET_STATE_REQ: (),
    Kind.GET_STATE_RESP: (PointState, TdsState),
    Kind.UNLOCK: (),
}


class QueryId(NamedTuple):
    """Identity of one detection run: triggering element and command seq."""

    origin: str
    seq: int

    def __str__(self) -> str:
        return f"{self.origin}@{self.seq}"


@dataclass(frozen=True)
class Message:
    seq: int
    time: int
    channel: Channel
    src: str
    dst: str
    kind: Kind
    arg: Arg = None
    # Simulation-side annotations; not part of the wire record.
    query: QueryId | None = field(default=None, compare=False)
    reason: Reason | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.channel is not self.kind.channel:
            raise ValueError(f"{self.kind.value} travels on {self.kind.channel.value}, not {self.channel.value}")
        allowed = ARG_TYPES[self.kind]
        if not allowed:
            if self.arg is not None:
                raise ValueError(f"{self.kind.value} takes no argument")
        elif not any(type(self.arg) is t for t in allowed):
            raise ValueError(f"{self.kind.value} argument must be {'/'.join(t.__name__ for t in allowed)}")


class ParseError(ValueError):
    FIELDS = ("seq", "time", "channel", "src", "dst", "kind", "arg")

    def __init__(self, index: int, message: str):
        self.index = index
        self.field = self.FIELDS[index]
        super().__init__(f"field {index} ({self.field}): {message}")


def _encode_arg(arg: Arg) -> str:
    if arg is None:
        return "-"
    if isinstance(arg, bool):
        return "TRUE" if arg else "FALSE"
    return arg.value


def encode_record(m: Message) -> str:
    return ";".join(
        (str(m.seq), str(m.time), m.channel.value, m.src, m.dst, m.kind.value, _encode_arg(m.arg))
    )


def decode_arg(kind: Kind, text: str) -> Arg:
    allowed = ARG_TYPES[kind]
    if not allowed:
        if text != "-":
            raise ParseError(6, f"{kind.value} takes no argument, got {text!r}")
        return None
    for typ in allowed:
        if typ is bool:
            if text in ("TRUE", "FALSE"):
                return text == "TRUE"
            continue
        try:
            return typ(text)
        except ValueError:
            continue
    raise ParseError(6, f"invalid argument {text!r} for {kind.value}")


def decode_record(line: str) -> Message:
    line = line.rstrip("\r\n")
    if not line.strip():
        raise ParseError(5, "empty record, kind missing")
    parts = line.split(";")
    if len(parts) != 7:
        raise ParseError(min(len(parts), 6), f"expected 7 fields, got {len(parts)}")
    seq_s, time_s, chan_s, src, dst, kind_s, arg_s = parts
    try:
        seq = int(seq_s)
    except ValueError:
        raise ParseError(0, f"not an integer: {seq_s!r}") from None
    try:
        time = int(time_s)
    except ValueError:
        raise ParseError(1, f"not an integer: {time_s!r}") from None
    try:
        channel = Channel(chan_s)
    except ValueError:
        raise ParseError(2, f"unknown channel {chan_s!r}") from None
    if not src:
        raise ParseError(3, "empty source")
    if not dst:
        raise ParseError(4, "empty destination")
    try:
        kind = Kind(kind_s)
    except ValueError:
        raise ParseError(5, f"unknown kind {kind_s!r}") from None
    if kind.channel is not channel:
        raise ParseError(2, f"{kind.value} does not travel on {channel.value}")
    return Message(seq, time, channel, src, dst, kind, decode_arg(kind, arg_s))


def write_trace(out: TextIO, messages: Iterable[Message]) -> None:
    out.write(TRACE_HEADER + "\n")
    for m in messages:
        out.write(encode_record(m) + "\n")


def read_trace(text: str) -> list[list[Message]]:
    """Parse a trace file into its runs.

    Lines starting with ``#`` other than the header start a new run when
    they carry ``#run``; any other comment is ignored.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRACE_HEADER:
        raise ParseError(0, f"missing header {TRACE_HEADER!r}")
    runs: list[list[Message]] = [[]]
    for line in lines[1:]:
        if line.startswith("#"):
            if line.startswith("#run") and runs[-1]:
                runs.append([])
            continue
        if not line.strip():
            continue
        runs[-1].append(decode_record(line))
    return runs


def count_query_messages(trace: Iterable[Message], q: QueryId) -> int:
    """Request and response messages a query sent; unlocks are not part of it."""
    return sum(
        1 for m in trace if m.channel is Channel.SECURITY and m.kind is not Kind.UNLOCK and m.query == q
    )
