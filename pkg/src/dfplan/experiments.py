"""Signed-vs-unsigned planning study and distance-field build benchmark."""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .distance_field import benchmark_build, compute_sdf, compute_usdf
from .planner import STUDY_PROFILE, LMParams, PlannerParams, build_graph, init_straight_line, min_clearance, optimize_lm
from .robot import RobotModel, arm7, nav2d, wholebody8
from .voxel_map import Cuboid, GridSpec, OccupancyGrid

CASES = ("nav2d", "arm", "wholebody")


@dataclass
class StudyDesign:
    case: str = "nav2d"
    n_states: int = 10
    n_envs: int = 50
    size_range: tuple[float, float] = (0.0, 1.0)
    # cuboid centers are drawn uniformly from this box
    workspace: tuple[tuple[float, float, float], tuple[float, float, float]] = ((0, 0, 0), (3, 3, 0))
    grid: GridSpec = field(default_factory=lambda: GridSpec((0, 0, -0.025), 0.05, (60, 60, 1)))
    # base position box for state sampling (nav2d: the xy position; wholebody: base x, y)
    state_box: tuple[tuple[float, float], tuple[float, float]] | None = ((0.3, 2.7), (0.3, 2.7))
    seed: int = 0
    n_support: int = 11
    dt: float = 1.0
    qc: float = 1.0
    eps: float = 0.2
    obs_sigma: float = 0.05
    prior_sigma: float = 1e-4
    n_interp: int = 5
    n_check: int = 10
    lm: LMParams = field(default_factory=lambda: LMParams(**asdict(STUDY_PROFILE)))
    robot_radius: float = 0.1
    max_retries: int = 10000

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown study case {self.case!r}")
        if self.n_states < 2 or self.n_envs < 1:
            raise ValueError("need n_states >= 2 and n_envs >= 1")

    @property
    def n_pairs(self) -> int:
        return self.n_states * (self.n_states - 1) // 2

    @property
    def n_problems(self) -> int:
        return self.n_pairs * self.n_envs

    def model(self) -> RobotModel:
        if self.case == "nav2d":
            z = self.grid.axis_centers(2)[0]
            return nav2d(height=z, radius=self.robot_radius)
        if self.case == "arm":
            return arm7()
        return wholebody8()

    def planner_params(self) -> PlannerParams:
        return PlannerParams(dt=self.dt, qc=self.qc, prior_sigma=self.prior_sigma, eps=self.eps,
                             obs_sigma=self.obs_sigma, n_interp=self.n_interp, lm=self.lm)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        return d


def default_design(case: str, **overrides) -> StudyDesign:
    """Desk-scale defaults per case."""
    if case == "nav2d":
        base = dict(case="nav2d")
    elif case == "arm":
        base = dict(case="arm", workspace=((-0.9, -0.9, 0.0), (0.9, 0.9, 1.1)),
                    grid=GridSpec((-1.0, -1.0, -0.2), 0.05, (40, 40, 32)), state_box=None,
                    n_support=10, dt=0.5, n_interp=3)
    elif case == "wholebody":
        base = dict(case="wholebody", workspace=((-0.5, -0.5, 0.0), (2.5, 2.5, 1.5)),
                    grid=GridSpec((-0.5, -0.5, 0.0), 0.05, (60, 60, 30)), state_box=((0.5, 1.5), (0.5, 1.5)),
                    n_support=10, dt=0.5, n_interp=3)
    else:
        raise ValueError(f"unknown study case {case!r}")
    base.update(overrides)
    return StudyDesign(**base)


@dataclass
class ProblemSet:
    design: StudyDesign
    states: np.ndarray
    pairs: list[tuple[int, int]]
    envs: list[Cuboid]

    @property
    def problems(self) -> list[tuple[int, int, int]]:
        """(env index, start index, goal index), environment-major."""
        return [(e, a, b) for e in range(len(self.envs)) for a, b in self.pairs]


def _env_mask(spec: GridSpec, c: Cuboid) -> np.ndarray:
    g = OccupancyGrid(spec)
    g.clear(free=True)
    g.rasterize(c)
    return g.snapshot()


def _sample_states(design: StudyDesign, model: RobotModel, rng) -> np.ndarray:
    lim = model.limits.copy()
    if design.case == "nav2d":
        lim[0], lim[1] = design.state_box
    elif design.case == "wholebody":
        lim[0], lim[1] = design.state_box
    states = []
    for _ in range(design.max_retries):
        q = rng.uniform(lim[:, 0], lim[:, 1])
        C = model.forward_kinematics(q)
        # arm links must stay above the support surface
        if design.case != "nav2d" and np.min(C[:, 2] - model.radii) < 0:
            continue
        states.append(q)
        if len(states) == design.n_states:
            return np.array(states)
    raise RuntimeError(f"could not sample {design.n_states} valid states in {design.max_retries} tries")


def generate_problems(design: StudyDesign) -> ProblemSet:
    """States, unordered pairs, and single-cuboid environments that leave every state collision-free."""
    rng = np.random.default_rng(design.seed)
    model = design.model()
    states = _sample_states(design, model, rng)
    centers_all = model.forward_kinematics(states)
    lo, hi = (np.asarray(v, dtype=float) for v in design.workspace)
    smin, smax = design.size_range
    envs = []
    for _ in range(design.n_envs):
        for _ in range(design.max_retries):
            center = rng.uniform(lo, hi)
            size = rng.uniform(smin, smax, 3)
            c = Cuboid(center, np.maximum(size / 2, 1e-9))
            mask = _env_mask(design.grid, c)
            if not mask.any():
                envs.append(c)
                break
            sdf = compute_sdf(mask, design.grid)
            if np.min(sdf.distance(centers_all) - model.radii) > 0:
                envs.append(c)
                break
        else:
            raise RuntimeError("could not place a cuboid clear of every sampled state")
    pairs = list(itertools.combinations(range(design.n_states), 2))
    return ProblemSet(design, states, pairs, envs)


def _solve_env(design: StudyDesign, states, pairs, cuboid: Cuboid, env_index: int) -> list[dict]:
    model = design.model()
    params = design.planner_params()
    mask = _env_mask(design.grid, cuboid)
    fields = {"sdf": compute_sdf(mask, design.grid), "usdf": compute_usdf(mask, design.grid)}
    checker = fields["sdf"]
    rows = []
    for a, b in pairs:
        row = {"env": env_index, "start": a, "goal": b}
        for tag, f in fields.items():
            graph = build_graph(model, states[a], states[b], params, f, design.n_support)
            init = init_straight_line(states[a], states[b], params, design.n_support)
            res = optimize_lm(graph, init, design.lm)
            clear = min_clearance(model, res.trajectory, checker, n_check=design.n_check)[0]
            row[f"{tag}_ok"] = bool(clear > 0)
            row[f"{tag}_iters"] = res.iterations
            row[f"{tag}_cost"] = res.final_error
            row[f"{tag}_clearance"] = clear
            row[f"{tag}_reason"] = res.converged_reason
        rows.append(row)
    return rows


def _solve_env_task(args):
    return _solve_env(*args)


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def _ratio(a: float, b: float):
    if b == 0:
        return None if a == 0 else float("inf")
    return a / b


@dataclass
class StudyResult:
    design: StudyDesign
    records: list[dict]
    runtime_s: float = 0.0

    @property
    def aggregates(self) -> dict:
        recs = self.records
        n = len(recs)
        both = [not r["sdf_ok"] and not r["usdf_ok"] for r in recs]
        n_both = int(sum(both))
        kept = n - n_both
        out = {"case": self.design.case, "n_problems": n, "n_both_failed": n_both}
        for tag in ("sdf", "usdf"):
            only = sum((not r[f"{tag}_ok"]) and not x for r, x in zip(recs, both))
            raw = sum(not r[f"{tag}_ok"] for r in recs)
            out[tag] = {
                "failure_rate": only / kept if kept else 0.0,
                "failure_rate_raw": raw / n if n else 0.0,
                "failures_exclusive": int(only),
                "failures_raw": int(raw),
                "iterations": _stats([r[f"{tag}_iters"] for r in recs]),
                "valid_cost": _stats([r[f"{tag}_cost"] for r in recs if r["sdf_ok"] and r["usdf_ok"]]),
            }
        s, u = out["sdf"], out["usdf"]
        out["relative"] = {
            "failure_rate": _ratio(u["failure_rate"], s["failure_rate"]),
            "failure_rate_raw": _ratio(u["failure_rate_raw"], s["failure_rate_raw"]),
            "iterations": _ratio(u["iterations"]["mean"], s["iterations"]["mean"]),
            "valid_cost": _ratio(u["valid_cost"]["mean"], s["valid_cost"]["mean"]),
        }
        return out

    def write_csv(self, path):
        cols = ["env", "start", "goal"] + [f"{t}_{k}" for t in ("sdf", "usdf")
                                           for k in ("ok", "iters", "cost", "clearance", "reason")] + ["both_failed"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                r = dict(r, both_failed=(not r["sdf_ok"] and not r["usdf_ok"]))
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump({"design": self.design.to_dict(), "aggregates": self.aggregates}, fh, indent=2,
                      sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def read_records(path) -> list[dict]:
    """Parse a per-problem CSV back into records (used to recompute aggregates independently)."""
    out = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            r = {}
            for k, v in row.items():
                if v in ("True", "False"):
                    r[k] = v == "True"
                elif k.endswith("_reason"):
                    r[k] = v
                elif k.endswith("_iters") or k in ("env", "start", "goal"):
                    r[k] = int(v)
                else:
                    r[k] = float(v)
            out.append(r)
    return out


def run_study(design: StudyDesign, workers: int = 1, progress=None) -> StudyResult:
    """Solve every problem with the signed and the unsigned field of the same mask."""
    t = time.perf_counter()
    ps = generate_problems(design)
    tasks = [(design, ps.states, ps.pairs, c, e) for e, c in enumerate(ps.envs)]
    records = []
    if workers > 1:
        from multiprocessing import get_context
        with get_context("spawn").Pool(workers) as pool:
            for k, rows in enumerate(pool.imap(_solve_env_task, tasks)):
                records.extend(rows)
                if progress:
                    progress(k + 1, len(tasks))
    else:
        for k, task in enumerate(tasks):
            records.extend(_solve_env_task(task))
            if progress:
                progress(k + 1, len(tasks))
    return StudyResult(design, records, time.perf_counter() - t)


def _fmt(x, digits=3):
    if x is None:
        return "n/a"
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{x:.{digits}g}"


def format_table(results: list[StudyResult]) -> str:
    """Three-block text table: failure rate, iterations, valid trajectory cost."""
    names = {"nav2d": "Navigation", "arm": "Arm", "wholebody": "Whole-Body"}
    aggs = [r.aggregates for r in results]
    lines = [f"{'':24s} {'':12s} {'USDF':>18s} {'SDF':>18s} {'USDF/SDF':>10s}"]
    for title, key in (("Failure Rate (%)", "failure_rate"), ("Iterations (mu+-sd)", "iterations"),
                       ("Valid Cost (mu+-sd)", "valid_cost")):
        lines.append("-" * 86)
        for i, a in enumerate(aggs):
            label = title if i == 0 else ""
            if key == "failure_rate":
                u, s = (f"{100 * a[t][key]:.3g}" for t in ("usdf", "sdf"))
            else:
                u, s = (f"{a[t][key]['mean']:.3g} +- {a[t][key]['std']:.3g}" for t in ("usdf", "sdf"))
            lines.append(f"{label:24s} {names[a['case']]:12s} {u:>18s} {s:>18s} {_fmt(a['relative'][key]):>10s}")
    lines.append("-" * 86)
    for a in aggs:
        lines.append(f"{names[a['case']]}: {a['n_problems']} problems, {a['n_both_failed']} failed under both "
                     f"(excluded from failure rates); raw failures USDF {a['usdf']['failures_raw']}, "
                     f"SDF {a['sdf']['failures_raw']}")
    return "\n".join(lines)


def bench_masks(spec: GridSpec, n: int, seed: int, n_boxes: int = 20) -> list[np.ndarray]:
    """Random cuboid scenes over the physical extent of ``spec``."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(spec.origin)
    hi = spec.upper
    masks = []
    for _ in range(n):
        g = OccupancyGrid(spec)
        g.clear(free=True)
        for _ in range(n_boxes):
            c = rng.uniform(lo, hi)
            h = rng.uniform(0.05, 0.5, 3) * (hi - lo) / 4
            g.rasterize(Cuboid(c, h))
        masks.append(g.snapshot())
    return masks


def run_field_bench(extent=(3.2, 3.2, 1.6), resolutions=(0.1, 0.05, 0.025), kinds=("signed", "unsigned"),
                    repetitions: int = 10, seed: int = 0) -> list[dict]:
    """Build-time table over resolutions covering one fixed physical extent."""
    if repetitions < 10:
        raise ValueError("at least 10 repetitions per cell are required")
    rows = []
    for res in resolutions:
        dims = tuple(int(round(e / res)) for e in extent)
        spec = GridSpec((0.0, 0.0, 0.0), res, dims)
        rows.extend(benchmark_build(bench_masks(spec, repetitions, seed), spec, kinds))
    return rows


def write_bench_csv(rows: list[dict], path):
    cols = ["resolution", "dims", "n_voxels", "kind", "n", "mean_ms", "std_ms", "median_ms", "signed_unsigned_ratio"]
    stages = sorted({k for r in rows for k in r["stages_ms"]})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + [f"stage_{s}_ms" for s in stages])
        for r in rows:
            w.writerow([r.get(c, "") for c in cols] + [r["stages_ms"].get(s, "") for s in stages])


def format_bench(rows: list[dict]) -> str:
    lines = [f"{'resolution (m)':>15s} {'dims':>12s} {'kind':>9s} {'mean +- std (ms)':>22s} {'S/U':>6s}"]
    for r in rows:
        lines.append(f"{r['resolution']:>15g} {r['dims']:>12s} {r['kind']:>9s} "
                     f"{r['mean_ms']:>12.2f} +- {r['std_ms']:<7.2f} {r.get('signed_unsigned_ratio', float('nan')):>6.2f}")
    return "\n".join(lines)


@dataclass
class RefitDesign:
    """Re-plan problems: an obstacle shifts while the robot is part-way along a plan that avoids it."""

    case: str = "wholebody"
    n_problems: int = 60
    shift: float = 0.1
    progress_range: tuple[float, float] = (0.2, 0.6)
    # the straight line between the chosen pair must carry at least this much obstacle error
    min_obstacle_error: float = 1.0
    seed: int = 0
    max_tries: int = 200


def run_refit_study(design: RefitDesign) -> dict:
    """LM iterations after an obstacle shift, refit initialisation vs straight line, same graph."""
    from .planner import REPLAN_PROFILE, gp_interpolate
    from .replanner import estimate_parameters, refit_trajectory

    base = default_design(design.case, n_states=10, n_envs=1, seed=design.seed)
    model = base.model()
    params = base.planner_params().with_profile(REPLAN_PROFILE)
    rng = np.random.default_rng(design.seed)
    states = _sample_states(base, model, rng)
    centers_all = model.forward_kinematics(states)
    pairs = list(itertools.combinations(range(base.n_states), 2))
    lo, hi = (np.asarray(v, dtype=float) for v in base.workspace)
    rows = []
    while len(rows) < design.n_problems:
        c = Cuboid(rng.uniform(lo, hi), np.maximum(rng.uniform(*base.size_range, 3) / 2, 1e-9))
        mask = _env_mask(base.grid, c)
        if not mask.any():
            continue
        f0 = compute_sdf(mask, base.grid)
        if np.min(f0.distance(centers_all) - model.radii) <= 0:
            continue
        for _ in range(design.max_tries):
            a, b = pairs[rng.integers(len(pairs))]
            n = estimate_parameters(states[a], states[b], model, params)["N"]
            g0 = build_graph(model, states[a], states[b], params, f0, n)
            line = init_straight_line(states[a], states[b], params, n)
            if g0.factor_errors(line.states)["obstacle"].sum() > design.min_obstacle_error:
                break
        else:
            continue
        xg = states[b]
        old = optimize_lm(g0, line, params.lm).trajectory
        t_now = rng.uniform(*design.progress_range) * old.duration
        q, v = gp_interpolate(old, t_now)
        c1 = c.moved_to(np.asarray(c.center) + rng.uniform(-design.shift, design.shift, 3))
        f1 = compute_sdf(_env_mask(base.grid, c1), base.grid)
        est = estimate_parameters(q, xg, model, params)
        g1 = build_graph(model, q, xg, params, f1, est["N"], start_vel=v)
        refit = optimize_lm(g1, refit_trajectory(old, q, est["N"], est["dt"], t_now=t_now, vc=v), params.lm)
        straight = init_straight_line(q, xg, params, est["N"])
        straight.velocities[0] = v
        plain = optimize_lm(g1, straight, params.lm)
        rows.append({"refit_iters": refit.iterations, "straight_iters": plain.iterations,
                     "refit_cost": refit.final_error, "straight_cost": plain.final_error})
    r = np.array([x["refit_iters"] for x in rows], float)
    s = np.array([x["straight_iters"] for x in rows], float)
    return {"case": design.case, "n_problems": len(rows), "refit_mean_iters": float(r.mean()),
            "straight_mean_iters": float(s.mean()), "ratio": float(r.mean() / s.mean()), "rows": rows}
