"""Command-line entry point: ``railguard validate|run|replay``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from railguard.harness import InvalidInput, MetricsReport, RunConfig, RunResult, combine, replay_runs, run
from railguard.network import parse_directives
from railguard.protocol import TRACE_HEADER, ParseError, encode_record, read_trace
from railguard.topology import TopologyError, enumerate_routes, longest_query_path, parse_topology, validate
from railguard.traffic import TrafficConfig, build_scenarios, generate_traffic, parse_schedule


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("RAILGUARD_SEED", "0"))


def _load_topology(path: str):
    return parse_topology(Path(path).read_text())


def _write_report(path: str | None, report: MetricsReport) -> None:
    text = report.to_json() if path and path.endswith(".json") else report.render()
    if path:
        Path(path).write_text(text)
    sys.stdout.write(report.render())


def cmd_validate(args) -> int:
    t = _load_topology(args.topology)
    violations = validate(t)
    for v in violations:
        print(v)
    if violations:
        return 1
    print(f"{len(t)} elements, {len(enumerate_routes(t))} routes, longest query {longest_query_path(t)} requests")
    return 0


def cmd_run(args) -> int:
    t = _load_topology(args.topology)
    config = RunConfig(detection=not args.no_detection)
    runs: list[tuple[str, RunResult]] = []
    if args.scenario:
        scenarios = build_scenarios(t, args.scenario)
        if not args.all_targets:
            scenarios = scenarios[:1]
        for sc in scenarios:
            cfg = RunConfig(detection=config.detection, initial_points=sc.initial_points)
            runs.append((sc.name, run(t, sc.schedule, sc.directives, cfg)))
    else:
        if args.traffic:
            schedule = parse_schedule(Path(args.traffic).read_text())
        else:
            schedule = generate_traffic(t, args.generate, _seed(args), TrafficConfig(cancel_fraction=args.cancel_fraction))
        directives = parse_directives(Path(args.attacks).read_text()) if args.attacks else []
        runs.append(("main", run(t, schedule, directives, config)))

    if args.trace_out:
        with open(args.trace_out, "w") as out:
            out.write(TRACE_HEADER + "\n")
            for name, r in runs:
                if len(runs) > 1:
                    out.write(f"#run {name}\n")
                for m in r.trace:
                    out.write(encode_record(m) + "\n")
    for name, r in runs:
        for a in r.alerts:
            logging.info("%s: alert at %s (%s) t=%d", name, a.element, a.reason.value, a.time)
    report = combine([r for _, r in runs])
    _write_report(args.report_out, report)
    return 0 if report.false_positives == 0 and report.false_negatives == 0 else 1


def cmd_replay(args) -> int:
    t = _load_topology(args.topology) if args.topology else None
    report = replay_runs(read_trace(Path(args.trace).read_text()), t)
    _write_report(args.report_out, report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="railguard", description="Distributed anomaly detection for railway interlockings")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a topology file")
    v.add_argument("--topology", required=True)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="simulate traffic and score detection")
    r.add_argument("--topology", required=True)
    src = r.add_mutually_exclusive_group()
    src.add_argument("--traffic", help="schedule file")
    src.add_argument("--generate", type=int, metavar="N", help="generate N train runs")
    r.add_argument("--seed", type=int, default=None, help="defaults to $RAILGUARD_SEED or 0")
    r.add_argument("--cancel-fraction", type=float, default=TrafficConfig.cancel_fraction)
    atk = r.add_mutually_exclusive_group()
    atk.add_argument("--attacks", help="attack directive file")
    atk.add_argument("--scenario", choices=["S1", "S2", "S3A", "S3B"])
    r.add_argument("--all-targets", action="store_true", help="run the scenario against every applicable element")
    r.add_argument("--no-detection", action="store_true", help="run checks in shadow; execute every command")
    r.add_argument("--trace-out")
    r.add_argument("--report-out")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="recompute metrics from a trace file")
    rp.add_argument("--trace", required=True)
    rp.add_argument("--topology")
    rp.add_argument("--report-out")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run" and not args.scenario and args.traffic is None and args.generate is None:
        parser.error("run needs --traffic, --generate or --scenario")
    try:
        return args.func(args)
    except (TopologyError, ParseError, InvalidInput, ValueError, OSError) as exc:
        print(f"railguard: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
