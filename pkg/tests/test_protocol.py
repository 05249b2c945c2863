import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from railguard.protocol import (
    ARG_TYPES,
    TRACE_HEADER,
    Channel,
    Kind,
    Message,
    ParseError,
    PointState,
    QueryId,
    SignalAspect,
    TdsState,
    count_query_messages,
    decode_record,
    encode_record,
    read_trace,
    write_trace,
)

ids = st.text(alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_", min_size=1, max_size=8)


def _arg_for(kind):
    options = []
    for typ in ARG_TYPES[kind]:
        options.append(st.booleans() if typ is bool else st.sampled_from(list(typ)))
    return st.one_of(*options) if options else st.none()


@st.composite
def messages(draw):
    kind = draw(st.sampled_from(list(Kind)))
    return Message(
        draw(st.integers(0, 10**9)),
        draw(st.integers(0, 10**9)),
        kind.channel,
        draw(ids),
        draw(ids),
        kind,
        draw(_arg_for(kind)),
    )


@given(messages())
def test_record_round_trip(m):
    assert decode_record(encode_record(m)) == m


@given(st.lists(messages(), max_size=20))
def test_trace_round_trip(ms):
    buf = io.StringIO()
    write_trace(buf, ms)
    assert read_trace(buf.getvalue()) == [ms]


def test_wire_format():
    m = Message(1, 0, Channel.SAFETY, "SB", "W1", Kind.SET_POINT, PointState.LEFT)
    assert encode_record(m) == "1;0;SAFETY;SB;W1;SET_POINT;LEFT"
    resp = Message(12, 110, Channel.SECURITY, "N2", "TDS2", Kind.IS_AVAILABLE_RESP, True)
    assert encode_record(resp) == "12;110;SECURITY;N2;TDS2;IS_AVAILABLE_RESP;TRUE"


def test_annotations_stay_off_the_wire():
    a = Message(5, 40, Channel.SECURITY, "A", "TDS1001", Kind.IS_AVAILABLE_REQ, query=QueryId("A", 5))
    b = decode_record(encode_record(a))
    assert a == b and b.query is None


@pytest.mark.parametrize(
    "line, field",
    [
        ("x;0;SAFETY;SB;W1;SET_POINT;LEFT", "seq"),
        ("1;t;SAFETY;SB;W1;SET_POINT;LEFT", "time"),
        ("1;0;RADIO;SB;W1;SET_POINT;LEFT", "channel"),
        ("1;0;SAFETY;;W1;SET_POINT;LEFT", "src"),
        ("1;0;SAFETY;SB;;SET_POINT;LEFT", "dst"),
        ("1;0;SAFETY;SB;W1;JUMP;LEFT", "kind"),
        ("1;0;SAFETY;SB;W1;SET_POINT;UP", "arg"),
        ("1;0;SECURITY;SB;W1;SET_POINT;LEFT", "channel"),
        ("1;0;SECURITY;A;B;UNLOCK;TRUE", "arg"),
        ("", "kind"),
    ],
)
def test_parse_error_names_field(line, field):
    with pytest.raises(ParseError) as info:
        decode_record(line)
    assert info.value.field == field


def test_message_rejects_wrong_channel_or_arg():
    with pytest.raises(ValueError):
        Message(1, 0, Channel.SECURITY, "SB", "W1", Kind.SET_POINT, PointState.LEFT)
    with pytest.raises(ValueError):
        Message(1, 0, Channel.SAFETY, "SB", "A", Kind.SET_SIGNAL, TdsState.CLEAR)


def test_get_state_resp_takes_either_state():
    Message(1, 0, Channel.SECURITY, "W1", "TDSW1", Kind.GET_STATE_RESP, PointState.LEFT)
    Message(1, 0, Channel.SECURITY, "TDS1001", "A", Kind.GET_STATE_RESP, TdsState.OCCUPIED)


def test_read_trace_splits_runs_and_needs_header():
    text = f"{TRACE_HEADER}\n#run one\n1;0;SAFETY;SB;A;SET_SIGNAL;STOP\n#run two\n1;0;SAFETY;A;SB;SIGNAL_ACK;STOP\n"
    runs = read_trace(text)
    assert [len(r) for r in runs] == [1, 1]
    assert runs[1][0].kind is Kind.SIGNAL_ACK
    with pytest.raises(ParseError):
        read_trace("1;0;SAFETY;SB;A;SET_SIGNAL;STOP\n")


def test_count_query_messages_skips_unlock():
    q = QueryId("A", 1)
    trace = [
        Message(1, 0, Channel.SECURITY, "A", "T", Kind.IS_AVAILABLE_REQ, query=q),
        Message(2, 10, Channel.SECURITY, "T", "A", Kind.IS_AVAILABLE_RESP, True, query=q),
        Message(3, 20, Channel.SECURITY, "A", "T", Kind.UNLOCK, query=q),
        Message(4, 30, Channel.SAFETY, "A", "SB", Kind.SIGNAL_ACK, SignalAspect.CLEAR),
    ]
    assert count_query_messages(trace, q) == 2
