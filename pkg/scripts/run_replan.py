"""Run every bundled re-planning scenario through the CLI and summarise the logs.

    python3 scripts/run_replan.py --out results/replan
"""
import argparse
import json
from pathlib import Path

from dfplan.cli import main as cli_main

SCENARIOS = ["floor_pickup", "replan_budget", "nav_sensing"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", nargs="+", default=SCENARIOS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/replan"))
    args = ap.parse_args(argv)
    for name in args.scenarios:
        out = args.out / name
        code = cli_main(["replan", "--config", name, "--seed", str(args.seed), "--out", str(out)])
        log = json.loads((out / "log.json").read_text())
        print(f"{name}: exit {code}, status {log['status']}, {log['replans']} re-plans")


if __name__ == "__main__":
    main()
