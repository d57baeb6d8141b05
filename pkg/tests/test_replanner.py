import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfplan.config import bundled_config, load_scenario
from dfplan.distance_field import compute_sdf
from dfplan.planner import PlannerParams, build_graph, gp_interpolate, init_straight_line, optimize_lm, trajectory_cost
from dfplan.replanner import (ExecutionState, ReplanConfig, Replanner, estimate_parameters, refit_trajectory,
                              run_replanning, still_valid)
from dfplan.robot import CollisionSphere, Joint, RobotModel, nav2d
from dfplan.voxel_map import Cuboid, GridSpec, OccupancyGrid
from dfplan.world_sim import MovingObstacle, WorldSim

SPEC = GridSpec((0.0, 0.0, -0.025), 0.05, (60, 60, 1))
ROBOT = nav2d(height=0.0, radius=0.1, vmax=0.5)


def field_with(*boxes):
    g = OccupancyGrid(SPEC)
    g.clear()
    for b in boxes:
        g.rasterize(b)
    return compute_sdf(g.snapshot(), SPEC)


def one_dof():
    return RobotModel("slider", [Joint("prismatic", (1, 0, 0), vmax=0.5)], [CollisionSphere(1, (0, 0, 0), 0.1)])


def test_estimate_parameters_examples():
    m = one_dof()
    p = PlannerParams(dt=0.5)
    assert estimate_parameters([0.0], [1.0], m, p) == {"N": 5, "dt": 0.5, "total_time": 2.0}
    assert estimate_parameters([0.3], [0.3], m, p) == {"N": 3, "dt": 0.5, "total_time": 1.0}
    assert estimate_parameters([0.0], [1.1], m, p)["total_time"] == 2.5


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.0, 1.0))
def test_estimate_parameters_slowest_dof_dominates(a, b, frac):
    p = PlannerParams(dt=0.5)
    m = nav2d(vmax=0.5)
    xc, xg = np.array([0.0, 0.0]), np.array([a, b])
    base = estimate_parameters(xc, xg, m, p)
    # shrinking the faster DoF's displacement leaves N unchanged
    k = int(np.argmin(np.abs(xg)))
    xg2 = xg.copy()
    xg2[k] *= frac
    assert estimate_parameters(xc, xg2, m, p)["N"] == base["N"]


def _plan(field, xc=(0.3, 1.5), xg=(2.7, 1.5)):
    p = PlannerParams(dt=1.0, n_interp=5)
    est = estimate_parameters(xc, xg, ROBOT, p)
    g = build_graph(ROBOT, xc, xg, p, field, est["N"])
    res = optimize_lm(g, init_straight_line(xc, xg, p, est["N"]))
    return ExecutionState(0.0, np.array(xc), np.zeros(2), res.trajectory, g, res.final_error), p


def test_still_valid_unchanged_field():
    f = field_with(Cuboid((1.5, 2.5, 0), (0.2, 0.2, 0.1)))
    st_, _ = _plan(f)
    v = still_valid(st_, f, ROBOT, ReplanConfig())
    assert v.valid and v.reason == "ok"


def test_still_valid_detects_collision_at_future_state():
    f = field_with()
    st_, _ = _plan(f)
    t_hit = st_.active_traj.times[3]
    q = st_.active_traj.positions[3]
    f2 = field_with(Cuboid((q[0], q[1], 0.0), (0.06, 0.06, 0.1)))
    v = still_valid(st_, f2, ROBOT, ReplanConfig(exec_interp_dt=0.05))
    assert not v.valid and v.reason == "collision"
    assert v.time <= t_hit + 1e-9
    # the reported time is the first collision of the sampled path
    for t in np.arange(0.0, v.time - 1e-9, 0.05):
        qq = gp_interpolate(st_.active_traj, t)[0]
        assert f2.distance(ROBOT.forward_kinematics(qq)).min() - 0.1 > 0


def test_still_valid_cost_criterion_against_oracle():
    f = field_with()
    st_, p = _plan(f)
    cfg = ReplanConfig()
    # box near the path but not touching it
    f2 = field_with(Cuboid((1.5, 1.85, 0.0), (0.3, 0.1, 0.1)))
    v = still_valid(st_, f2, ROBOT, cfg)
    oracle_cost = trajectory_cost(build_graph(ROBOT, (0.3, 1.5), (2.7, 1.5), p, f2, st_.active_traj.n_states),
                                  st_.active_traj)
    assert v.min_clearance > 0
    assert oracle_cost > st_.initial_cost * cfg.cost_tolerance_factor + cfg.abs_slack
    assert not v.valid and v.reason == "cost"
    assert v.cost == pytest.approx(oracle_cost, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 59), st.integers(0, 59)), min_size=1, max_size=40))
def test_collision_verdict_monotone_in_obstacles(cells):
    base = Cuboid((1.5, 1.5, 0.0), (0.1, 0.1, 0.1))
    f = field_with()
    st_, _ = _plan(f)
    g = OccupancyGrid(SPEC)
    g.clear()
    g.rasterize(base)
    v1 = still_valid(st_, compute_sdf(g.snapshot(), SPEC), ROBOT, ReplanConfig())
    mask = g.snapshot().copy()
    for i, j in cells:
        mask[i, j, 0] = True
    v2 = still_valid(st_, compute_sdf(mask, SPEC), ROBOT, ReplanConfig())
    if v1.reason == "collision":
        assert v2.reason == "collision"
    assert v2.min_clearance <= v1.min_clearance + 1e-12


def test_refit_identity_and_degenerate():
    rng = np.random.default_rng(0)
    from dfplan.planner import Trajectory
    old = Trajectory(0.5, rng.normal(size=(6, 3)), rng.normal(size=(6, 3)), 2.0)
    same = refit_trajectory(old, old.positions[0], 6, 0.5, t_now=2.0)
    assert np.allclose(same.positions, old.positions, atol=1e-12)
    assert np.allclose(same.velocities, old.velocities, atol=1e-12)
    xc = rng.normal(size=3)
    two = refit_trajectory(old, xc, 2, 0.5, t_now=3.1)
    assert np.array_equal(two.positions[0], xc)
    assert np.allclose(two.positions[1], old.positions[-1])
    assert two.t0 == 3.1
    with pytest.raises(ValueError):
        refit_trajectory(old, xc, 1, 0.5)


def _world(*moving, static=()):
    return WorldSim(SPEC, list(static), list(moving))


def test_static_empty_world_single_plan():
    log = Replanner(ROBOT, PlannerParams(dt=1.0, n_interp=5), ReplanConfig()).run(_world(), (0.3, 0.3), (2.0, 1.0))
    assert log.status == "reached"
    assert log.replans == 0 and len(log.plans) == 1
    assert log.min_clearance > 0


def test_goal_inside_obstacle_never_reached():
    block = Cuboid((2.0, 1.0, 0.0), (0.4, 0.4, 0.1))
    cfg = ReplanConfig(timeout=4.0)
    log = run_replanning(ROBOT, (2.0, 1.0), _world(static=[block]), PlannerParams(dt=1.0, n_interp=5), cfg,
                         start=(0.3, 0.3))
    assert log.status == "failed"
    assert log.reason in ("collision", "timeout")


def test_crossing_obstacle_triggers_replan_and_stays_clear():
    mover = MovingObstacle(Cuboid((1.5, 2.8, 0.0), (0.15, 0.15, 0.1)),
                           [(0.0, (1.5, 2.8, 0.0)), (1.0, (1.5, 1.6, 0.0))])
    w = _world(mover)
    log = Replanner(ROBOT, PlannerParams(dt=1.0, n_interp=5), ReplanConfig()).run(w, (0.3, 1.5), (2.7, 1.5))
    assert log.status == "reached"
    assert log.replans >= 1
    ts, Q = log.executed_path()
    C = ROBOT.forward_kinematics(Q)[:, 0]
    for t, c in zip(ts, C):
        box = mover.shape_at(t)
        assert box.distance(c) - ROBOT.radii[0] > 0


def test_floor_pickup_scenario_runs_to_goal():
    sc = load_scenario(bundled_config("floor_pickup"))
    log = Replanner(sc.model, sc.params, sc.cfg).run(sc.world, sc.start, sc.goal)
    assert log.status == "reached"
    assert log.replans >= 1
    ts, Q = log.executed_path()
    # swaps anchor at the current state: no step larger than ordinary motion between ticks
    step = np.abs(np.diff(Q, axis=0)).max(axis=0)
    assert np.all(step <= sc.model.vmax * sc.cfg.exec_interp_dt)
    assert np.allclose(Q[-1], sc.goal, atol=sc.cfg.goal_tol)


def test_config_validation():
    with pytest.raises(ValueError):
        ReplanConfig(cost_tolerance_factor=1.0)
    with pytest.raises(ValueError):
        ReplanConfig(monitor_rate=0)
    with pytest.raises(ValueError):
        run_replanning(ROBOT, (1, 1), _world(), PlannerParams(), ReplanConfig())
