"""Run every attack scenario instance with and without detection.

Prints one line per instance: the first alert raised, and the hazards reached
when detection is switched off.

Usage: python scripts/run_scenarios.py [--topology stations/example.topo] [--scenario S2]
"""
import argparse
import sys
from pathlib import Path

from railguard.harness import RunConfig, run
from railguard.stations import example_station
from railguard.topology import parse_topology
from railguard.traffic import build_scenarios


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--topology")
    p.add_argument("--scenario", choices=["S1", "S2", "S3A", "S3B"])
    args = p.parse_args()
    t = parse_topology(Path(args.topology).read_text()) if args.topology else example_station()

    failures = 0
    print(f"{'instance':<22} {'first alert':<34} {'FN':>3}  hazards without detection")
    for sc in build_scenarios(t, args.scenario):
        on = run(t, sc.schedule, sc.directives, RunConfig(initial_points=sc.initial_points))
        off = run(t, sc.schedule, sc.directives, RunConfig(detection=False, initial_points=sc.initial_points))
        first = f"{on.alerts[0].element} {on.alerts[0].reason.value}" if on.alerts else "none"
        hazards = ", ".join(sorted({f"{h.element}:{h.kind}" for h in off.hazards})) or "none"
        ok = on.report.false_negatives == 0 and not on.hazards and off.hazards
        failures += not ok
        print(f"{sc.name:<22} {first:<34} {on.report.false_negatives:>3}  {hazards}")
    print(f"\n{failures} instance(s) failed")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
