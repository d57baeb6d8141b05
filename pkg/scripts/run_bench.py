"""Time signed and unsigned field construction across grid resolutions.

    python3 scripts/run_bench.py --out results/bench
"""
import argparse
from pathlib import Path

from dfplan.experiments import format_bench, run_field_bench, write_bench_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolutions", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/bench"))
    args = ap.parse_args(argv)
    rows = run_field_bench(resolutions=tuple(args.resolutions), repetitions=args.reps, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, args.out / "bench.csv")
    print(format_bench(rows))


if __name__ == "__main__":
    main()
