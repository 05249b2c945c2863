"""Run orchestration, the omniscient hazard oracle, scoring and metrics."""
from __future__ import annotations

import json
import statistics
from collections import Counter, defaultdict, deque
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, NamedTuple

from railguard.fe_detection import Alert, Controller, FieldElementState, Journal, TdsController, build_controllers
from railguard.network import AttackDirective, Network, Scheduler
from railguard.protocol import (
    SIGNALBOX,
    Channel,
    Kind,
    Message,
    PointState,
    QueryId,
    SignalAspect,
    TdsState,
    write_trace,
)
from railguard.signalbox import SignalBox
from railguard.topology import ElementKind, Topology, validate
from railguard.traffic import CancelEvent, Event, OccupancyEvent, RawCommand, RouteEvent, elements_of


class InvalidInput(ValueError):
    """Run inputs rejected before anything executes."""


# -- oracle --------------------------------------------------------------------

class Verdict(NamedTuple):
    hazardous: bool
    reason: str | None = None

    def __str__(self) -> str:
        return f"HAZARDOUS({self.reason})" if self.hazardous else "SAFE"


SAFE = Verdict(False)


def _path_hazard(
    t: Topology, snap: Mapping[str, FieldElementState], signal: str, own: QueryId | None = None
) -> Verdict:
    """Walk the track a train would take past ``signal`` given true point positions."""
    prev, here = signal, t[signal]["succ"]
    if here is None:
        return Verdict(True, "no_route")
    seen: set[str] = set()
    while here is not None:
        node = t[here]
        if node.kind is ElementKind.SIGNAL:
            return SAFE
        if here in seen:
            return Verdict(True, "loop")
        seen.add(here)
        st = snap[here]
        if st.tds_state is TdsState.OCCUPIED:
            return Verdict(True, "collision")
        if st.locked and (own is None or st.lock_query != own):
            return Verdict(True, "conflict")
        if node.kind is ElementKind.TRACK_SECTION_TDS:
            if prev == node["pred_a"]:
                nxt = node["succ_b"]
            elif prev == node["pred_b"]:
                nxt = node["succ_a"]
            else:
                return Verdict(True, "no_route")
        else:
            position = snap[node["point"]].point_state
            if prev == node["pred_a"]:
                # facing move: the blade picks the branch
                nxt = node["succ_b"] if position is PointState.RIGHT else node["succ_c"]
            elif prev == node["pred_b"]:
                if position is not PointState.RIGHT:
                    return Verdict(True, "derailment")
                nxt = node["succ_a"]
            elif prev == node["pred_c"]:
                if position is not PointState.LEFT:
                    return Verdict(True, "derailment")
                nxt = node["succ_a"]
            else:
                return Verdict(True, "no_route")
        prev, here = here, nxt
    return SAFE


def oracle_classify(t: Topology, snap: Mapping[str, FieldElementState], cmd: Message) -> Verdict:
    """Label a command against the true field state at its arrival."""
    if cmd.kind is Kind.SET_POINT:
        st = snap[t[cmd.dst]["tds"]]
        if st.tds_state is TdsState.OCCUPIED:
            return Verdict(True, "derailment")
        if st.locked:
            return Verdict(True, "reserved")
        return SAFE
    if cmd.kind is Kind.SET_SIGNAL and cmd.arg is SignalAspect.CLEAR:
        if snap[cmd.dst].aspect is SignalAspect.CLEAR:
            # changes nothing the field is not already showing
            return SAFE
        return _path_hazard(t, snap, cmd.dst)
    return SAFE


@dataclass(frozen=True)
class Hazard:
    time: int
    element: str
    kind: str


class GroundTruthView:
    """Live read-only access to field state for the attacker and the monitor."""

    def __init__(self, topology: Topology, controllers: Mapping[str, Controller]):
        self.topology = topology
        self.states = {k: c.state for k, c in controllers.items()}

    def _section(self, element: str) -> str | None:
        kind = self.topology.kind(element)
        if kind is ElementKind.POINT:
            return self.topology[element]["tds"]
        if kind is ElementKind.SIGNAL:
            return self.topology[element]["succ"]
        return element

    def occupied(self, element: str) -> bool:
        s = self._section(element)
        return s is not None and self.states[s].tds_state is TdsState.OCCUPIED

    def locked(self, element: str) -> bool:
        s = self._section(element)
        return s is not None and bool(self.states[s].locked)

    def point_state(self, point: str) -> PointState:
        return self.states[point].point_state


# -- metrics --------------------------------------------------------------------

ROW_LABELS = (
    "Field Elements",
    "Commands",
    "Algorithm Executions",
    "Fraction",
    "Total Messages",
    "Maximum Messages",
    "Mean Messages",
    "Median Messages",
    "Alerts",
    "False Positives",
    "False Negatives",
)


@dataclass(frozen=True)
class MetricsReport:
    field_elements: int
    commands: int
    algorithm_executions: int
    total_messages: int
    max_messages: int
    mean_messages: float
    median_messages: float
    alerts: int | None = None
    false_positives: int | None = None
    false_negatives: int | None = None

    @property
    def fraction(self) -> float:
        return 100.0 * self.algorithm_executions / self.commands if self.commands else 0.0

    def values(self) -> list[str]:
        def opt(v):
            return "n/a" if v is None else str(v)

        return [
            str(self.field_elements),
            str(self.commands),
            str(self.algorithm_executions),
            f"{self.fraction:.2f} %",
            str(self.total_messages),
            str(self.max_messages),
            f"{self.mean_messages:.2f}",
            f"{self.median_messages:.1f}",
            opt(self.alerts),
            opt(self.false_positives),
            opt(self.false_negatives),
        ]

    def render(self) -> str:
        width = max(len(label) for label in ROW_LABELS)
        return "\n".join(f"{label:<{width}}  {value}" for label, value in zip(ROW_LABELS, self.values())) + "\n"

    def to_json(self) -> str:
        data = asdict(self)
        data["fraction"] = round(self.fraction, 2)
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def summarize(
    field_elements: int,
    commands: int,
    per_query: list[int],
    total_messages: int,
    alerts: int | None = None,
    false_positives: int | None = None,
    false_negatives: int | None = None,
) -> MetricsReport:
    return MetricsReport(
        field_elements=field_elements,
        commands=commands,
        algorithm_executions=len(per_query),
        total_messages=total_messages,
        max_messages=max(per_query, default=0),
        mean_messages=round(statistics.fmean(per_query), 2) if per_query else 0.0,
        median_messages=float(statistics.median_low(per_query)) if per_query else 0.0,
        alerts=alerts,
        false_positives=false_positives,
        false_negatives=false_negatives,
    )


def query_message_counts(trace: Iterable[Message]) -> Counter:
    """Request/response messages per query, unlocks and notifications excluded."""
    return Counter(
        m.query for m in trace
        if m.channel is Channel.SECURITY and m.kind is not Kind.UNLOCK and m.query is not None
    )


# -- running ----------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    detection: bool = True
    latency_ms: int = 10
    inject_delay_ms: int = 500
    ack_timeout_ms: int = 5000
    initial_points: Mapping[str, PointState] = field(default_factory=dict)


@dataclass
class RunResult:
    topology: Topology
    trace: list[Message]
    journal: Journal
    verdicts: dict[int, tuple[Message, Verdict]]
    hazards: list[Hazard]
    report: MetricsReport
    per_query: dict[QueryId, int]
    signalbox: SignalBox
    controllers: dict[str, Controller]
    network: Network

    @property
    def alerts(self) -> list[Alert]:
        return self.journal.alerts

    def false_positive_alerts(self) -> list[Alert]:
        return [a for a in self.alerts if _verdict_of(self.verdicts, a.rejected_command) is False]

    def missed(self) -> list[Message]:
        """Hazardous commands that executed."""
        return [cmd for _, _, cmd in self.journal.executed if _verdict_of(self.verdicts, cmd) is True]

    def locked_sections(self) -> list[str]:
        return sorted(k for k, c in self.controllers.items() if isinstance(c, TdsController) and c.state.locked)

    def trace_text(self) -> str:
        import io

        buf = io.StringIO()
        write_trace(buf, self.trace)
        return buf.getvalue()


def _verdict_of(verdicts: Mapping[int, tuple[Message, Verdict]], cmd: Message) -> bool | None:
    entry = verdicts.get(cmd.seq)
    if entry is None or entry[0] != cmd:
        return None
    return entry[1].hazardous


def check_inputs(t: Topology, schedule: Iterable[Event], directives: Iterable[AttackDirective]) -> None:
    violations = validate(t)
    if violations:
        raise InvalidInput("invalid topology: " + "; ".join(map(str, violations)))
    for e in schedule:
        for element in elements_of(e):
            if element not in t:
                raise InvalidInput(f"schedule names unknown element {element!r} at {e.time} ms")
        if isinstance(e, OccupancyEvent) and not t.kind(e.tds).is_tds:
            raise InvalidInput(f"{e.tds} is not a track section")
    for d in directives:
        if d.target not in t:
            raise InvalidInput(f"attack targets unknown element {d.target!r}")


def run(
    topology: Topology,
    schedule: Iterable[Event],
    directives: Iterable[AttackDirective] = (),
    config: RunConfig = RunConfig(),
) -> RunResult:
    schedule = list(schedule)
    directives = list(directives)
    check_inputs(topology, schedule, directives)
    scheduler = Scheduler()
    net = Network(topology, scheduler, config.latency_ms, directives, config.inject_delay_ms)
    journal = Journal()
    controllers = build_controllers(topology, net, journal, config.detection, dict(config.initial_points))
    sb = SignalBox(topology, net, config.ack_timeout_ms, config.initial_points)
    truth = GroundTruthView(topology, controllers)
    net.truth = truth
    verdicts: dict[int, tuple[Message, Verdict]] = {}
    hazards: list[Hazard] = []

    def classify(m: Message) -> None:
        if m.dst != SIGNALBOX and m.kind.is_command:
            verdicts[m.seq] = (m, oracle_classify(topology, truth.states, m))

    def monitor(element: str, cmd: Message, query: QueryId | None) -> None:
        if cmd.kind is Kind.SET_POINT:
            tds = topology[element]["tds"]
            if truth.occupied(tds):
                hazards.append(Hazard(scheduler.now, element, "point_under_occupied"))
            elif truth.locked(tds):
                hazards.append(Hazard(scheduler.now, element, "point_under_reserved"))
        elif cmd.arg is SignalAspect.CLEAR and query is not None:
            v = _path_hazard(topology, truth.states, element, own=query)
            if v.hazardous:
                hazards.append(Hazard(scheduler.now, element, f"clear_{v.reason}"))

    net.delivery_hooks.append(classify)
    journal.on_execute.append(monitor)

    for e in schedule:
        if isinstance(e, RouteEvent):
            scheduler.at(e.time, sb.request_route, e.request)
        elif isinstance(e, CancelEvent):
            scheduler.at(e.time, sb.cancel, e.signal)
        elif isinstance(e, OccupancyEvent):
            scheduler.at(e.time, controllers[e.tds].set_occupancy, e.state)
        elif isinstance(e, RawCommand):
            scheduler.at(e.time, sb.send_raw, e.message.dst, e.message.kind, e.message.arg)
    scheduler.run(after_event=net.poll)

    counts = query_message_counts(net.trace)
    per_query = {q: counts.get(q, 0) for _, q in journal.triggers}
    commands = sum(
        1 for ev, m in net.log.entries
        if ev == "delivered" and m.kind in (Kind.SET_POINT, Kind.SET_SIGNAL, Kind.TDS_REPORT)
    )
    result = RunResult(
        topology, net.trace, journal, verdicts, hazards, None, per_query, sb, controllers, net  # type: ignore[arg-type]
    )
    result.report = summarize(
        len(topology),
        commands,
        list(per_query.values()),
        sum(1 for m in net.trace if m.channel is Channel.SECURITY),
        alerts=len(journal.alerts),
        false_positives=len(result.false_positive_alerts()),
        false_negatives=len(result.missed()),
    )
    return result


def combine(results: list[RunResult]) -> MetricsReport:
    """One report over several independent runs on the same layout."""
    per_query = [n for r in results for n in r.per_query.values()]
    reports = [r.report for r in results]
    return summarize(
        reports[0].field_elements if reports else 0,
        sum(r.commands for r in reports),
        per_query,
        sum(r.total_messages for r in reports),
        alerts=sum(r.alerts for r in reports),
        false_positives=sum(r.false_positives for r in reports),
        false_negatives=sum(r.false_negatives for r in reports),
    )


# -- replay ------------------------------------------------------------------------

def replay(trace: list[Message], topology: Topology | None = None, latency_ms: int = 10) -> MetricsReport:
    """Recompute the communication metrics from a bare trace.

    Scoring needs the oracle, so alerts and the two error counts come out as
    ``None``.
    """
    return replay_runs([trace], topology, latency_ms)


def replay_runs(traces: list[list[Message]], topology: Topology | None = None, latency_ms: int = 10) -> MetricsReport:
    """Pool several independent runs (one trace each) into one report."""
    elements, commands, total = 0, 0, 0
    per_query: list[int] = []
    for trace in traces:
        e, c, pq, tot = _replay_counts(trace, topology, latency_ms)
        elements = max(elements, e)
        commands += c
        total += tot
        per_query.extend(pq)
    return summarize(elements, commands, per_query, total)


def _replay_counts(trace: list[Message], topology: Topology | None, latency_ms: int) -> tuple[int, int, list[int], int]:
    """Attribute every security message of one run to its query.

    The wire format carries no query ids, so messages are attributed to
    queries causally: responses answer the outstanding request on the same
    pair, and a section forwards the earliest request it has received and not
    yet answered.
    """
    pending: dict[tuple[str, str], deque] = defaultdict(deque)
    after_point: dict[str, QueryId] = {}
    signals: set[str] = set()
    aspects: dict[str, SignalAspect] = {}
    counts: Counter = Counter()
    triggers: list[QueryId] = []
    commands = 0
    total = 0

    def outstanding_into(x: str, now: int) -> QueryId | None:
        best = None
        for (a, b), queue in pending.items():
            if b != x or not queue:
                continue
            seq, sent, kind, q = queue[0]
            if kind is Kind.IS_AVAILABLE_REQ and sent + latency_ms <= now and (best is None or seq < best[0]):
                best = (seq, q)
        return best[1] if best else None

    for m in sorted(trace, key=lambda m: m.seq):
        if m.kind in (Kind.SET_POINT, Kind.SET_SIGNAL, Kind.TDS_REPORT):
            commands += 1
        if m.kind is Kind.SET_SIGNAL:
            signals.add(m.dst)
            if (
                topology is not None
                and m.arg is SignalAspect.CLEAR
                and topology[m.dst]["succ"] is None
                and aspects.get(m.dst, SignalAspect.STOP) is SignalAspect.STOP
            ):
                triggers.append(QueryId(m.dst, m.seq))
        elif m.kind is Kind.SIGNAL_ACK:
            aspects[m.src] = m.arg
        if m.channel is not Channel.SECURITY:
            continue
        total += 1
        q: QueryId | None = None
        if m.kind is Kind.CAN_SWITCH_REQ or (m.kind is Kind.IS_AVAILABLE_REQ and m.src in signals and (
            topology is None or topology.kind(m.src) is ElementKind.SIGNAL
        )):
            q = QueryId(m.src, m.seq)
            triggers.append(q)
        elif m.kind in (Kind.IS_AVAILABLE_REQ, Kind.GET_STATE_REQ):
            q = after_point.pop(m.src, None) if m.kind is Kind.IS_AVAILABLE_REQ else None
            if q is None:
                q = outstanding_into(m.src, m.time)
            if m.kind is Kind.GET_STATE_REQ:
                after_point[m.src] = q
        elif m.kind in (Kind.IS_AVAILABLE_RESP, Kind.CAN_SWITCH_RESP) or (
            m.kind is Kind.GET_STATE_RESP and isinstance(m.arg, PointState)
        ):
            queue = pending.get((m.dst, m.src))
            if queue:
                q = queue.popleft()[3]
            if q is not None and after_point.get(m.src) == q:
                after_point.pop(m.src)
        if m.kind in (Kind.IS_AVAILABLE_REQ, Kind.CAN_SWITCH_REQ, Kind.GET_STATE_REQ):
            pending[(m.src, m.dst)].append((m.seq, m.time, m.kind, q))
        if m.kind is not Kind.UNLOCK and q is not None:
            counts[q] += 1

    if topology is not None:
        elements = len(topology)
    else:
        elements = len({x for m in trace for x in (m.src, m.dst)} - {SIGNALBOX})
    return elements, commands, [counts.get(q, 0) for q in triggers], total
