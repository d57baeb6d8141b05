"""Command-line entry point: ``dfplan {study,bench-edt,replan,inspect-field}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import experiments
from .config import SCHEMA_VERSION, ConfigError, bundled_config, config_hash, load_scenario, load_study
from .distance_field import compute_field
from .io import write_field, write_timings_csv
from .replanner import Replanner

log = logging.getLogger("dfplan")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "numba", "PyYAML"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _resolve_config(arg: str | None, default: str | None) -> Path | None:
    if arg is None:
        return bundled_config(default) if default else None
    p = Path(arg)
    if p.exists():
        return p
    try:
        return bundled_config(arg)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {arg}") from None


class _Manifest:
    def __init__(self, out: Path, command: str, argv, config: Path | None, seed):
        self.path = out / "manifest.json"
        self.data = {
            "command": command,
            "argv": list(argv),
            "config": str(config) if config else None,
            "config_sha256": config_hash(config) if config else None,
            "seed": seed,
            "schema_version": SCHEMA_VERSION,
            "versions": _versions(),
            "status": "running",
            "outputs": [],
        }
        self.write()

    def write(self):
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def finish(self, status: str, outputs, **extra):
        self.data.update(status=status, outputs=sorted(str(o) for o in outputs), **extra)
        self.write()


def _cmd_study(args, argv) -> int:
    cfg = _resolve_config(args.config, None)
    if cfg is not None:
        designs = [load_study(cfg)]
        if args.case not in (None, designs[0].case):
            raise ConfigError(f"--case {args.case} conflicts with config case {designs[0].case}")
    else:
        cases = experiments.CASES if args.case in (None, "all") else (args.case,)
        designs = [experiments.default_design(c) for c in cases]
    over = {k: v for k, v in (("seed", args.seed), ("n_states", args.n_states), ("n_envs", args.n_envs))
            if v is not None}
    designs = [experiments.StudyDesign(**{**d.__dict__, **over}) for d in designs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(out, "study", argv, cfg, designs[0].seed)
    results, outputs = [], []
    for d in designs:
        log.info("study %s: %d problems", d.case, d.n_problems)
        r = experiments.run_study(d, workers=args.workers,
                                  progress=lambda k, n: log.debug("  environment %d/%d", k, n))
        log.info("study %s finished in %.1f s", d.case, r.runtime_s)
        r.write_csv(out / f"{d.case}_problems.csv")
        r.write_json(out / f"{d.case}_aggregate.json")
        outputs += [f"{d.case}_problems.csv", f"{d.case}_aggregate.json"]
        results.append(r)
    report = experiments.format_table(results)
    (out / "report.txt").write_text(report + "\n")
    outputs.append("report.txt")
    print(report)
    man.finish("ok", outputs + ["manifest.json"])
    return 0


def _cmd_bench(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(out, "bench-edt", argv, None, args.seed)
    rows = experiments.run_field_bench(extent=tuple(args.extent), resolutions=tuple(args.resolutions),
                                       repetitions=args.reps, seed=args.seed)
    experiments.write_bench_csv(rows, out / "bench.csv")
    table = experiments.format_bench(rows)
    (out / "bench.txt").write_text(table + "\n")
    print(table)
    man.finish("ok", ["bench.csv", "bench.txt", "manifest.json"])
    return 0


def _cmd_replan(args, argv) -> int:
    cfg = _resolve_config(args.config, "floor_pickup")
    sc = load_scenario(cfg)
    if args.seed is not None:
        sc.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(out, "replan", argv, cfg, sc.seed)
    world = sc.world
    outputs = ["log.json", "log.csv", "map_timings.csv", "manifest.json"]
    timings = []
    dumps = []
    inner = world.advance_to

    def advance(t):
        res = inner(t)
        timings.append((t, res.timings))
        if args.dump_every and res.changed and (len(dumps) == 0 or t - dumps[-1] >= args.dump_every - 1e-9):
            fdir = out / "fields"
            fdir.mkdir(exist_ok=True)
            write_field(fdir / f"field_{len(dumps):04d}.dfld", res.field, {"clock": t})
            dumps.append(t)
        return res

    world.advance_to = advance
    t0 = time.perf_counter()
    elog = Replanner(sc.model, sc.params, sc.cfg).run(world, sc.start, sc.goal, verbose=args.verbose > 0)
    log.info("replan %s: %s (%s), %d re-plans, min clearance %.4f m, %.1f s wall", sc.name, elog.status,
             elog.reason, elog.replans, elog.min_clearance, time.perf_counter() - t0)
    elog.write_json(out / "log.json")
    elog.write_csv(out / "log.csv")
    write_timings_csv(out / "map_timings.csv", timings)
    outputs += [f"fields/field_{k:04d}.dfld" for k in range(len(dumps))]
    print(f"{elog.status}: {elog.reason}; re-plans {elog.replans}; min clearance {elog.min_clearance:.4f} m")
    man.finish(elog.status, outputs, result={"status": elog.status, "reason": elog.reason})
    return 0 if elog.status == "reached" else 3


def _cmd_inspect(args, argv) -> int:
    cfg = _resolve_config(args.config, "floor_pickup")
    sc = load_scenario(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(out, "inspect-field", argv, cfg, sc.seed)
    world = sc.world
    world.advance_to(args.time)
    field = world.field if args.kind is None else compute_field(world.grid.snapshot(), world.spec, args.kind)
    write_field(out / "field.dfld", field, {"clock": args.time})
    spec = field.spec
    zs = spec.axis_centers(2)
    k = int(np.argmin(np.abs(zs - args.z))) if args.z is not None else spec.dims[2] // 2
    xs, ys = spec.axis_centers(0), spec.axis_centers(1)
    with open(out / "slice.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "distance"])
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(zs[k])), repr(float(field.values[i, j, k]))])
    v = field.values
    print(f"{field.kind} field {spec.dims} at {spec.resolution} m: min {v.min():.3f}, max {v.max():.3f}; "
          f"slice z={zs[k]:.3f}")
    man.finish("ok", ["field.dfld", "slice.csv", "manifest.json"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfplan", description="Distance-field trajectory optimisation experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("study", help="signed vs unsigned field planning study")
    s.add_argument("--case", choices=experiments.CASES + ("all",))
    s.add_argument("--config", help="study YAML (path or bundled name)")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-states", type=int)
    s.add_argument("--n-envs", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default="out/study")

    b = sub.add_parser("bench-edt", help="distance field build benchmark")
    b.add_argument("--resolutions", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    b.add_argument("--extent", type=float, nargs=3, default=[3.2, 3.2, 1.6])
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="out/bench")

    r = sub.add_parser("replan", help="lockstep re-planning run on a scenario")
    r.add_argument("--config", help="scenario YAML (path or bundled name, default floor_pickup)")
    r.add_argument("--seed", type=int)
    r.add_argument("--dump-every", type=float, default=0.0, help="field dump period in simulated seconds")
    r.add_argument("--out", default="out/replan")

    f = sub.add_parser("inspect-field", help="build one field from a scenario and dump it")
    f.add_argument("--config", help="scenario YAML (path or bundled name, default floor_pickup)")
    f.add_argument("--time", type=float, default=0.0)
    f.add_argument("--kind", choices=("signed", "unsigned"))
    f.add_argument("--z", type=float, help="slice height (default: middle layer)")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", default="out/field")
    return p


_COMMANDS = {"study": _cmd_study, "bench-edt": _cmd_bench, "replan": _cmd_replan, "inspect-field": _cmd_inspect}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args, argv)
    except (ConfigError, FileNotFoundError) as e:
        print(f"dfplan {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
