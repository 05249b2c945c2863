import pytest

from helpers import CLEAR, STOP, L, R, occupy, release, route, set_signal, simulate
from railguard.network import AttackDirective, AttackMode, Trigger
from railguard.protocol import Kind, TdsState
from railguard.signalbox import Phase, RouteRequest
from railguard.traffic import CancelEvent, generate_traffic


def _kinds(trace):
    return [m.kind.value for m in trace]


def test_route_setting_order(station):
    r = simulate(station, [route(0, "A", "N2", W1=L)])
    assert _kinds(r.trace) == [
        "SET_POINT", "CAN_SWITCH_REQ", "CAN_SWITCH_RESP", "POINT_ACK",
        "SET_SIGNAL",
        "IS_AVAILABLE_REQ", "IS_AVAILABLE_REQ", "GET_STATE_REQ", "GET_STATE_RESP",
        "IS_AVAILABLE_REQ", "IS_AVAILABLE_REQ",
        "IS_AVAILABLE_RESP", "IS_AVAILABLE_RESP", "IS_AVAILABLE_RESP", "IS_AVAILABLE_RESP",
        "SIGNAL_ACK",
    ]
    assert [m.time for m in r.trace] == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150]
    assert r.signalbox.routes["A"].phase is Phase.SET
    assert r.signalbox.mirror["A"] is CLEAR


def test_points_already_in_place_are_still_commanded(station):
    r = simulate(station, [route(0, "A", "N1", W1=R)])
    assert _kinds(r.trace)[0] == "SET_POINT"
    assert r.controllers["A"].state.aspect is CLEAR


def test_local_rejection_sends_nothing(station):
    r = simulate(station, [occupy(0, "TDS2"), route(100, "A", "N2", W1=L)])
    assert _kinds(r.trace) == ["TDS_REPORT"]
    [(_, event, detail)] = [e for e in r.signalbox.events if e[1] == "route_rejected"]
    assert "TDS2 is occupied" in detail


def test_conflicting_reservation_rejected_locally(station):
    r = simulate(station, [route(0, "A", "N2", W1=L), route(500, "P2", None, W1=L)])
    rejected = [d for _, e, d in r.signalbox.events if e == "route_rejected"]
    assert rejected == ["route P2 - W1=LEFT: TDSW1 is reserved by the route from A"]


def test_unknown_route_rejected(station):
    sb_events = simulate(station, [route(0, "A", "P1")]).signalbox.events
    assert sb_events == [(0, "route_rejected", "route A P1: no such route")]


def test_forged_ack_lets_route_proceed(station):
    d = AttackDirective(AttackMode.POINT_DROP, "W1", Trigger("on_next_cmd"))
    r = simulate(station, [route(0, "A", "N2", W1=L)], [d])
    assert r.signalbox.mirror["W1"] is L
    assert r.controllers["W1"].state.point_state is R
    assert ("SB", "A", Kind.SET_SIGNAL) in [(m.src, m.dst, m.kind) for m in r.trace]


def test_train_lifecycle_releases_route(station):
    events = [
        route(0, "A", "N2", W1=L),
        occupy(1000, "TDS1001"),
        occupy(3000, "TDSW1"),
        release(3500, "TDS1001"),
        occupy(5000, "TDS2"),
        release(5500, "TDSW1"),
        release(7500, "TDS2"),
    ]
    r = simulate(station, events)
    sb = r.signalbox
    # the entry signal went back to STOP as soon as the train passed it
    assert r.controllers["A"].state.aspect is STOP and sb.mirror["A"] is STOP
    assert sb.routes == {} and sb.reserved == {}
    assert [e for _, e, _ in sb.events] == ["route_requested", "route_set", "route_released"]
    assert r.locked_sections() == []


def test_sectional_release(station):
    events = [route(0, "A", "N2", W1=L), occupy(1000, "TDS1001"), occupy(3000, "TDSW1"), release(3500, "TDS1001")]
    sb = simulate(station, events).signalbox
    assert sb.reserved == {"TDSW1": "A", "TDS2": "A"}
    assert sb.routes["A"].phase is Phase.IN_USE


def test_cancel_set_route(station):
    r = simulate(station, [route(0, "A", "N2", W1=L), CancelEvent(1500, "A")])
    assert r.signalbox.routes == {} and r.signalbox.reserved == {}
    assert r.locked_sections() == []
    assert r.controllers["A"].state.aspect is STOP


def test_cancel_while_setting_points(station):
    r = simulate(station, [route(0, "A", "N2", W1=L), CancelEvent(5, "A")])
    assert r.signalbox.routes == {}
    assert not [m for m in r.trace if m.kind is Kind.SET_SIGNAL]


def test_cancel_in_use_refused(station):
    r = simulate(station, [route(0, "A", "N2", W1=L), occupy(1000, "TDS1001"), CancelEvent(1500, "A")])
    assert (1500, "cancel_refused", "A") in r.signalbox.events


def test_unacknowledged_route_times_out(station):
    # the field refuses: a train nobody told the box about stands in TDS2
    d = AttackDirective(AttackMode.TDS_DROP, "TDS2", Trigger("occupied"))
    r = simulate(station, [occupy(0, "TDS2"), route(100, "A", "N2", W1=L)], [d])
    sb = r.signalbox
    assert [e for _, e, _ in sb.events][-1] == "route_failed"
    assert sb.events[-1][0] == 100 + 5000
    assert sb.reserved == {} and sb.routes == {}


def test_raw_commands_bypass_interlocking(station):
    r = simulate(station, [occupy(0, "TDS1001"), set_signal(100, "A", CLEAR)])
    assert r.signalbox.mirror["TDS1001"] is TdsState.OCCUPIED
    assert [(m.dst, m.arg) for m in r.trace if m.kind is Kind.SET_SIGNAL] == [("A", CLEAR)]
    assert r.alerts


def test_route_request_str_and_guard():
    assert str(RouteRequest("A", "N2", (("W1", L),))) == "route A N2 W1=LEFT"
    assert str(RouteRequest("P1", None)) == "route P1 -"
    with pytest.raises(ValueError):
        RouteRequest("A", "A")


def test_mirror_matches_field_after_clean_traffic(station):
    r = simulate(station, generate_traffic(station, 150, seed=3))
    for element, seen in r.signalbox.mirror.items():
        st = r.controllers[element].state
        truth = st.point_state if st.point_state is not None else st.aspect if st.aspect is not None else st.tds_state
        assert seen is truth, element
    assert r.signalbox.routes == {} and r.signalbox.reserved == {}
