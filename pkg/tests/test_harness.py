import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import CLEAR, STOP, L, occupy, random_instance, route, set_point, set_signal, simulate
from railguard.fe_detection import FieldElementState
from railguard.harness import (
    SAFE,
    InvalidInput,
    MetricsReport,
    Verdict,
    combine,
    oracle_classify,
    replay,
    summarize,
)
from railguard.network import AttackDirective, AttackMode, Trigger
from railguard.protocol import SIGNALBOX, Channel, Kind, Message, QueryId, TdsState, read_trace
from railguard.topology import parse_topology
from railguard.traffic import generate_traffic


def _snap(t, **over):
    snap = {n.id: FieldElementState.initial(n) for n in t}
    for k, v in over.items():
        snap[k] = v
    return snap


def _cmd(dst, kind, arg):
    return Message(1, 0, Channel.SAFETY, SIGNALBOX, dst, kind, arg)


def _tds(t, name, **fields):
    return replace(FieldElementState.initial(t[name]), **fields)


# -- oracle --------------------------------------------------------------------


def test_oracle_point_cases(station):
    cmd = _cmd("W1", Kind.SET_POINT, L)
    assert oracle_classify(station, _snap(station), cmd) == SAFE
    occ = _snap(station, TDSW1=_tds(station, "TDSW1", tds_state=TdsState.OCCUPIED))
    assert oracle_classify(station, occ, cmd) == Verdict(True, "derailment")
    held = _snap(station, TDSW1=_tds(station, "TDSW1", locked=True, lock_query=QueryId("P1", 3)))
    assert oracle_classify(station, held, cmd) == Verdict(True, "reserved")


def test_oracle_signal_cases(station):
    clear_a = _cmd("A", Kind.SET_SIGNAL, CLEAR)
    assert oracle_classify(station, _snap(station), clear_a) == SAFE
    occ = _snap(station, TDS1=_tds(station, "TDS1", tds_state=TdsState.OCCUPIED))
    assert oracle_classify(station, occ, clear_a) == Verdict(True, "collision")
    held = _snap(station, TDSW1=_tds(station, "TDSW1", locked=True, lock_query=QueryId("P2", 9)))
    assert oracle_classify(station, held, clear_a) == Verdict(True, "conflict")
    # P1 trails through W1 from the right branch; W1 set left derails
    left = _snap(station, W1=replace(FieldElementState.initial(station["W1"]), point_state=L))
    assert oracle_classify(station, left, _cmd("P1", Kind.SET_SIGNAL, CLEAR)) == Verdict(True, "derailment")
    assert oracle_classify(station, left, _cmd("P2", Kind.SET_SIGNAL, CLEAR)) == SAFE


def test_oracle_stop_and_reports_are_safe(station):
    occ = _snap(station, TDS1001=_tds(station, "TDS1001", tds_state=TdsState.OCCUPIED))
    assert oracle_classify(station, occ, _cmd("A", Kind.SET_SIGNAL, STOP)) == SAFE


def test_oracle_no_route_and_loop():
    t = parse_topology(
        "signal S succ=T1\n"
        "signal Z succ=-\n"
        "tds T1 pred_a=S succ_a=- pred_b=- succ_b=T2\n"
        "tds T2 pred_a=T1 succ_a=T3 pred_b=T3 succ_b=T3\n"
        "tds T3 pred_a=T2 succ_a=- pred_b=- succ_b=T2\n"
    )
    assert oracle_classify(t, _snap(t), _cmd("Z", Kind.SET_SIGNAL, CLEAR)) == Verdict(True, "no_route")
    assert oracle_classify(t, _snap(t), _cmd("S", Kind.SET_SIGNAL, CLEAR)) == Verdict(True, "loop")


def test_verdict_str():
    assert str(SAFE) == "SAFE"
    assert str(Verdict(True, "collision")) == "HAZARDOUS(collision)"


# -- metrics --------------------------------------------------------------------


def test_render_rows_and_formats():
    rep = summarize(16, 8, [2, 10], 12, alerts=0, false_positives=0, false_negatives=0)
    lines = rep.render().splitlines()
    assert [ln.split("  ")[0] for ln in lines][:2] == ["Field Elements", "Commands"]
    assert lines[3].endswith("25.00 %")
    assert lines[6].endswith("6.00") and lines[7].endswith("2.0")
    assert len(lines) == 11


def test_empty_run_fraction_is_zero():
    rep = summarize(16, 0, [], 0)
    assert "0.00 %" in rep.render()
    assert rep.values()[-3:] == ["n/a", "n/a", "n/a"]


def test_median_is_lower_median():
    assert summarize(1, 4, [2, 2, 10, 10], 0).median_messages == 2.0


def test_json_report():
    rep = summarize(16, 8, [2, 10], 12, alerts=1, false_positives=0, false_negatives=0)
    data = json.loads(rep.to_json())
    assert data["fraction"] == 25.0 and data["median_messages"] == 2.0 and data["alerts"] == 1
    assert MetricsReport(**{k: v for k, v in data.items() if k != "fraction"}) == rep


def test_combine_pools_per_query_counts(station):
    a = simulate(station, [route(0, "A", "N2", W1=L)])
    b = simulate(station, [set_point(0, "W2", L)])
    rep = combine([a, b])
    assert rep.algorithm_executions == 3
    assert rep.max_messages == 10 and rep.median_messages == 2.0
    assert rep.commands == a.report.commands + b.report.commands


def test_single_route_report(station):
    r = simulate(station, [route(0, "A", "N2", W1=L)])
    assert sorted(r.per_query.values()) == [2, 10]
    assert r.report.commands == 2 and r.report.total_messages == 12


# -- run ------------------------------------------------------------------------


def test_invalid_inputs(station):
    with pytest.raises(InvalidInput):
        simulate(station, [occupy(0, "W1")])
    with pytest.raises(InvalidInput):
        simulate(station, [occupy(0, "TDS99")])
    with pytest.raises(InvalidInput):
        simulate(station, [], [AttackDirective(AttackMode.TDS_DROP, "NOPE", Trigger("occupied"))])
    broken = parse_topology("signal A succ=T\ntds T pred_a=- succ_a=- pred_b=- succ_b=-\n")
    with pytest.raises(InvalidInput):
        simulate(broken, [])


def test_no_detection_executes_hazards(station):
    events = [occupy(0, "TDSW1"), set_point(100, "W1", L)]
    guarded = simulate(station, events)
    open_ = simulate(station, events, detection=False)
    assert guarded.report.false_negatives == 0 and guarded.alerts
    assert open_.report.false_negatives == 1 and not open_.alerts
    assert [h.kind for h in open_.hazards] == ["point_under_occupied"]
    # the checks still ran in shadow, so the message counts match
    assert open_.report.total_messages == guarded.report.total_messages


def test_rejected_hazard_is_not_a_false_positive(station):
    r = simulate(station, [occupy(0, "TDS1001"), set_signal(100, "A", CLEAR)])
    [alert] = r.alerts
    assert r.verdicts[alert.rejected_command.seq][1].hazardous
    assert r.false_positive_alerts() == []


def test_trace_text_reads_back(station):
    r = simulate(station, [route(0, "A", "N2", W1=L)])
    assert read_trace(r.trace_text()) == [r.trace]


# -- replay ---------------------------------------------------------------------


def _comm(rep):
    return (
        rep.field_elements, rep.commands, rep.algorithm_executions,
        rep.total_messages, rep.max_messages, rep.mean_messages, rep.median_messages,
    )


def test_replay_single_route(station):
    r = simulate(station, [route(0, "A", "N2", W1=L)])
    rep = replay(r.trace, station)
    assert _comm(rep) == _comm(r.report)
    assert rep.alerts is None and rep.false_negatives is None


def test_replay_clean_traffic(station):
    r = simulate(station, generate_traffic(station, 300, seed=11))
    assert _comm(replay(r.trace, station)) == _comm(r.report)


def test_replay_without_topology_counts_elements_seen(station):
    r = simulate(station, [route(0, "A", "N2", W1=L)])
    assert replay(r.trace).field_elements == len({"W1", "TDSW1", "A", "TDS1001", "TDS2", "N2"})


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6))
def test_detection_agrees_with_oracle(seed):
    t, events, directives = random_instance(seed)
    r = simulate(t, events, directives)
    assert r.report.false_positives == 0
    assert r.report.false_negatives == 0
    assert r.hazards == []


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_replay_equals_run(seed):
    t, events, directives = random_instance(seed)
    r = simulate(t, events, directives)
    assert _comm(replay(r.trace, t)) == _comm(r.report)
