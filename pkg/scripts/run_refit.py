"""Compare warm-started refits against straight-line restarts after an obstacle moves.

    python3 scripts/run_refit.py --case wholebody --seeds 0 1 2
"""
import argparse

from dfplan.experiments import RefitDesign, run_refit_study


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default="wholebody", choices=["nav2d", "arm", "wholebody"])
    ap.add_argument("--n-problems", type=int, default=60)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args(argv)
    for seed in args.seeds:
        r = run_refit_study(RefitDesign(case=args.case, n_problems=args.n_problems, seed=seed))
        print(f"{r['case']} seed {seed}: {r['n_problems']} problems, refit {r['refit_mean_iters']:.2f} "
              f"vs straight {r['straight_mean_iters']:.2f} iterations, ratio {r['ratio']:.3f}")


if __name__ == "__main__":
    main()
