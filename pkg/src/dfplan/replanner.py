"""Receding-horizon execution loop: plan, execute, monitor, re-plan.

Lockstep mode advances a single simulated clock in monitor ticks, updates
the world at the map rate and runs planning instantaneously, so a whole run
is a deterministic function of its inputs.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .distance_field import DistanceField
from .planner import (REPLAN_PROFILE, FactorGraph, LMParams, PlannerParams, Trajectory, build_graph, gp_interpolate,
                      init_straight_line, optimize_lm, sample_trajectory)
from .robot import RobotModel
from .world_sim import WorldSim


@dataclass
class ReplanConfig:
    monitor_rate: float = 250.0
    replan_rate_cap: float = 10.0
    map_rate: float = 30.0
    cost_tolerance_factor: float = 1.5
    abs_slack: float = 1e-3
    goal_tol: float = 0.02
    exec_interp_dt: float = 0.05
    time_scale: float = 1.0
    timeout: float = 60.0
    refit: bool = True

    def __post_init__(self):
        if self.monitor_rate <= 0 or self.replan_rate_cap <= 0 or self.map_rate <= 0:
            raise ValueError("rates must be positive")
        if self.cost_tolerance_factor <= 1:
            raise ValueError("cost_tolerance_factor must exceed 1")
        if self.time_scale < 1:
            raise ValueError("time_scale must be >= 1")


def estimate_parameters(xc, xg, model: RobotModel, params: PlannerParams, time_scale: float = 1.0) -> dict:
    """Velocity-limited duration of the slowest DoF, rounded up to whole ``dt`` steps (at least two)."""
    dt = params.dt
    delta = np.abs(np.asarray(xg, float) - np.asarray(xc, float))
    raw = float(np.max(delta / model.vmax)) * time_scale if delta.size else 0.0
    steps = max(2, int(math.ceil(raw / dt - 1e-9)))
    return {"N": steps + 1, "dt": dt, "total_time": steps * dt}


def refit_trajectory(old: Trajectory, xc, newN: int, dt: float, Qc=None, t_now: float | None = None,
                     vc=None) -> Trajectory:
    """Resample what is left of ``old`` onto ``newN`` states spaced ``dt`` apart, starting at ``xc``.

    New support k maps to old time ``t_now + k/(newN-1) * remaining``; times past
    the old horizon take the old terminal state.
    """
    if newN < 2:
        raise ValueError("newN must be >= 2")
    t_now = old.t0 if t_now is None else float(t_now)
    xc = np.asarray(xc, dtype=float)
    remaining = max(old.t_end - t_now, 0.0)
    pos = np.empty((newN, old.dof))
    vel = np.empty((newN, old.dof))
    for k in range(1, newN):
        t_old = min(t_now + remaining * k / (newN - 1), old.t_end)
        if t_old < old.t0:
            t_old = old.t0
        pos[k], vel[k] = gp_interpolate(old, t_old, Qc)
    pos[0] = xc
    if vc is not None:
        vel[0] = vc
    else:
        vel[0] = gp_interpolate(old, min(max(t_now, old.t0), old.t_end), Qc)[1]
    return Trajectory(dt, pos, vel, t_now)


@dataclass
class Validity:
    valid: bool
    reason: str
    time: float | None = None
    cost: float | None = None
    min_clearance: float | None = None


@dataclass
class ExecutionState:
    clock: float
    current_config: np.ndarray
    current_velocity: np.ndarray
    active_traj: Trajectory
    active_graph: FactorGraph
    initial_cost: float
    status: str = "executing"
    plan_id: int = 0


def graph_with_field(graph: FactorGraph, field: DistanceField) -> FactorGraph:
    g = object.__new__(FactorGraph)
    g.__dict__.update(graph.__dict__)
    g.field = field
    return g


def still_valid(exec_state: ExecutionState, field: DistanceField, model: RobotModel, cfg: ReplanConfig) -> Validity:
    """Remaining trajectory collision-free in ``field`` and its cost within tolerance of the accepted cost."""
    traj = exec_state.active_traj
    times, q, _ = sample_trajectory(traj, cfg.exec_interp_dt, exec_state.clock)
    C = model.forward_kinematics(q)
    clear = (field.distance(C) - model.radii).min(axis=1)
    bad = np.nonzero(clear <= 0)[0]
    mc = float(clear.min())
    if bad.size:
        return Validity(False, "collision", float(times[bad[0]]), None, mc)
    cost = graph_with_field(exec_state.active_graph, field).error(traj.states)
    if cost > exec_state.initial_cost * cfg.cost_tolerance_factor + cfg.abs_slack:
        return Validity(False, "cost", exec_state.clock, cost, mc)
    return Validity(True, "ok", None, cost, mc)


@dataclass
class ExecutionLog:
    status: str = "executing"
    reason: str = ""
    plans: list[dict] = field(default_factory=list)
    samples: list[tuple] = field(default_factory=list)  # (t, q..., min clearance)
    events: list[dict] = field(default_factory=list)
    wall_times: list[dict] = field(default_factory=list)

    @property
    def replans(self) -> int:
        return max(len(self.plans) - 1, 0)

    @property
    def min_clearance(self) -> float:
        return min((s[-1] for s in self.samples), default=float("inf"))

    def executed_path(self) -> tuple[np.ndarray, np.ndarray]:
        arr = np.array([s[:-1] for s in self.samples])
        return arr[:, 0], arr[:, 1:]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "reason": self.reason,
            "replans": self.replans,
            "min_clearance": self.min_clearance,
            "plans": self.plans,
            "events": self.events,
            "n_samples": len(self.samples),
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.samples:
                d = len(self.samples[0]) - 2
                w.writerow(["t"] + [f"q{j}" for j in range(d)] + ["min_clearance"])
            for s in self.samples:
                w.writerow([repr(float(v)) for v in s])


class Replanner:
    """Algorithm state for one goal; ``run`` drives it in lockstep against a :class:`WorldSim`."""

    def __init__(self, model: RobotModel, params: PlannerParams, cfg: ReplanConfig, lm: LMParams | None = None):
        self.model = model
        self.params = params.with_profile(lm or REPLAN_PROFILE)
        self.cfg = cfg

    def plan(self, xc, vc, xg, field: DistanceField, t_now: float, previous: Trajectory | None):
        est = estimate_parameters(xc, xg, self.model, self.params, self.cfg.time_scale)
        graph = build_graph(self.model, xc, xg, self.params, field, est["N"], start_vel=vc)
        if previous is not None and self.cfg.refit:
            init = refit_trajectory(previous, xc, est["N"], est["dt"], t_now=t_now, vc=vc)
            kind = "refit"
        else:
            init = init_straight_line(xc, xg, self.params, est["N"], t0=t_now)
            init.velocities[0] = vc
            kind = "straight"
        res = optimize_lm(graph, init, self.params.lm)
        traj = res.trajectory
        traj.t0 = t_now
        return traj, graph, res, est, kind

    def run(self, world: WorldSim, xc, xg, *, verbose: bool = False) -> ExecutionLog:
        cfg, model = self.cfg, self.model
        xg = np.asarray(xg, dtype=float)
        log = ExecutionLog()
        tick = 1.0 / cfg.monitor_rate
        map_period = 1.0 / cfg.map_rate
        replan_period = 1.0 / cfg.replan_rate_cap

        step = world.advance_to(0.0)
        q = np.asarray(xc, dtype=float)
        v = np.zeros_like(q)
        wall = time.perf_counter()
        traj, graph, res, est, kind = self.plan(q, v, xg, step.field, 0.0, None)
        log.wall_times.append({"t": 0.0, "plan_s": time.perf_counter() - wall})
        state = ExecutionState(0.0, q, v, traj, graph, res.final_error)
        self._record_plan(log, 0.0, "initial", kind, res, est)
        last_replan = 0.0
        next_map = map_period
        cache_key, cache_valid = None, False
        k = 0
        n_ticks = int(math.ceil(cfg.timeout / tick))
        while k < n_ticks:
            k += 1
            clock = k * tick
            if clock + 1e-12 >= next_map:
                step = world.advance_to(clock)
                next_map += map_period
            field = world.field
            t_exec = min(clock, state.active_traj.t_end)
            q, v = gp_interpolate(state.active_traj, t_exec)
            if clock > state.active_traj.t_end:
                v = np.zeros_like(v)
            state.clock, state.current_config, state.current_velocity = clock, q, v
            clear = float(np.min(field.distance(model.forward_kinematics(q)) - model.radii))
            log.samples.append((clock, *q.tolist(), clear))
            if clear <= 0:
                log.status, log.reason = "failed", "collision"
                log.events.append({"t": clock, "event": "collision", "clearance": clear})
                break
            if clock >= state.active_traj.t_end - 1e-12 and np.all(np.abs(q - xg) <= cfg.goal_tol):
                log.status, log.reason = "reached", "goal"
                break

            key = (world.version, state.plan_id)
            if key == cache_key and cache_valid:
                valid = Validity(True, "ok")
            else:
                valid = still_valid(state, field, model, cfg)
                cache_key, cache_valid = key, valid.valid
            if valid.valid and clock >= state.active_traj.t_end - 1e-12:
                valid = Validity(False, "horizon", clock)
            if valid.valid:
                continue
            if clock - last_replan < replan_period - 1e-12:
                continue
            wall = time.perf_counter()
            traj, graph, res, est, kind = self.plan(q, v, xg, field, clock, state.active_traj)
            log.wall_times.append({"t": clock, "plan_s": time.perf_counter() - wall})
            state.active_traj, state.active_graph, state.initial_cost = traj, graph, res.final_error
            state.plan_id += 1
            last_replan = clock
            self._record_plan(log, clock, valid.reason, kind, res, est, valid.time)
            if verbose:
                print(f"t={clock:.3f} replan ({valid.reason}) N={est['N']} it={res.iterations} "
                      f"E={res.final_error:.4g}")
        else:
            log.status, log.reason = "failed", "timeout"
        return log

    @staticmethod
    def _record_plan(log, t, trigger, kind, res, est, at=None):
        log.plans.append({
            "t": t,
            "trigger": trigger,
            "violation_time": at,
            "init": kind,
            "N": est["N"],
            "dt": est["dt"],
            "iterations": res.iterations,
            "initial_error": res.initial_error,
            "final_error": res.final_error,
            "converged_reason": res.converged_reason,
        })


def run_replanning(model: RobotModel, xg, world: WorldSim, params: PlannerParams, cfg: ReplanConfig,
                   start=None, verbose: bool = False) -> ExecutionLog:
    if start is None:
        raise ValueError("a start configuration is required")
    return Replanner(model, params, cfg).run(world, start, xg, verbose=verbose)
