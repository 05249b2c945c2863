"""Communication-overhead table for the three station layouts under clean traffic.

Usage: python scripts/run_table1.py [--runs 1000] [--seed 7] [--json out.json]
"""
import argparse
import json
import time

from railguard.harness import ROW_LABELS, run
from railguard.stations import example_station, random_layout
from railguard.traffic import generate_traffic

LAYOUTS = {
    "example": lambda: example_station(),
    "random ~30": lambda: random_layout(1, 30),
    "random ~60": lambda: random_layout(2, 60),
}


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--json", help="also write the reports as JSON")
    args = p.parse_args()

    columns, reports = [], {}
    for name, make in LAYOUTS.items():
        t = make()
        start = time.perf_counter()
        rep = run(t, generate_traffic(t, args.runs, args.seed)).report
        print(f"{name}: {len(t)} elements, {time.perf_counter() - start:.1f} s")
        columns.append((name, rep.values()))
        reports[name] = json.loads(rep.to_json())

    width = max(len(label) for label in ROW_LABELS)
    print()
    print(" " * width + "".join(f"  {name:>12}" for name, _ in columns))
    for i, label in enumerate(ROW_LABELS):
        print(f"{label:<{width}}" + "".join(f"  {values[i]:>12}" for _, values in columns))
    if args.json:
        with open(args.json, "w") as out:
            json.dump(reports, out, indent=2)


if __name__ == "__main__":
    main()
