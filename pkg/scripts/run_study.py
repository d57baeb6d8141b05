"""Run the signed vs unsigned planning study for all three cases and print the comparison table.

    python3 scripts/run_study.py --out results/study [--workers 4]
"""
import argparse
import sys
from pathlib import Path

from dfplan.experiments import default_design, format_table, run_study


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", nargs="+", default=["nav2d", "arm", "wholebody"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/study"))
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    results = []
    for case in args.cases:
        r = run_study(default_design(case, seed=args.seed), workers=args.workers)
        r.write_csv(args.out / f"{case}_problems.csv")
        r.write_json(args.out / f"{case}_aggregate.json")
        print(f"{case}: {r.design.n_problems} problems in {r.runtime_s:.0f} s", file=sys.stderr)
        results.append(r)
    table = format_table(results)
    (args.out / "report.txt").write_text(table + "\n")
    print(table)


if __name__ == "__main__":
    main()
