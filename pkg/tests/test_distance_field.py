import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dfplan.distance_field import (DistanceField, benchmark_build, compute_field, compute_sdf, compute_usdf,
                                   squared_edt)
from dfplan.voxel_map import GridSpec
from oracles import brute_sdf, brute_sq_edt, brute_usdf, cell_distance, central_diff, rel_err


def spec_for(shape, res=1.0, origin=(0.0, 0.0, 0.0)):
    return GridSpec(origin, res, shape)


def test_single_voxel_distance():
    m = np.zeros((8, 8, 8), bool)
    m[4, 4, 4] = True
    f = compute_usdf(m, spec_for(m.shape, 0.1))
    assert f.values[4, 4, 7] == pytest.approx(0.3, abs=1e-15)
    assert f.kind == "unsigned"


def test_all_occupied_and_empty():
    spec = spec_for((5, 4, 3), 0.2)
    full = np.ones(spec.dims, bool)
    assert np.all(compute_usdf(full, spec).values == 0)
    empty = np.zeros(spec.dims, bool)
    assert np.all(compute_usdf(empty, spec).values == spec.diagonal)
    assert np.all(compute_sdf(empty, spec).values == spec.diagonal)
    assert np.all(compute_sdf(full, spec).values == -spec.diagonal)


def test_sdf_block_center():
    m = np.zeros((9, 9, 9), bool)
    m[3:6, 3:6, 3:6] = True
    f = compute_sdf(m, spec_for(m.shape))
    assert f.values[4, 4, 4] == -2.0
    assert np.array_equal(f.values, brute_sdf(m, 1.0, f.spec.diagonal))


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 7), st.integers(1, 7), st.integers(1, 6)),
              elements=st.booleans()))
def test_squared_edt_matches_brute_force(mask):
    assert np.array_equal(squared_edt(mask), brute_sq_edt(mask))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.9))
def test_sdf_identity_and_sign(seed, p):
    rng = np.random.default_rng(seed)
    m = rng.random((9, 8, 7)) < p
    spec = spec_for(m.shape, 0.05)
    sdf = compute_sdf(m, spec).values
    ident = compute_usdf(m, spec).values - compute_usdf(~m, spec).values
    assert np.array_equal(sdf, ident)
    if m.any() and (~m).any():
        assert np.array_equal(sdf < 0, m)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_usdf_is_lipschitz(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((8, 8, 8)) < 0.05
    m[0, 0, 0] = True
    v = compute_usdf(m, spec_for(m.shape, 0.1)).values
    idx = rng.integers(0, 8, (200, 2, 3))
    a, b = idx[:, 0], idx[:, 1]
    lhs = np.abs(v[tuple(a.T)] - v[tuple(b.T)])
    rhs = 0.1 * np.linalg.norm(a - b, axis=1)
    assert np.all(lhs <= rhs + 1e-12)


def test_planar_grid_matches_oracle():
    rng = np.random.default_rng(3)
    m = rng.random((20, 17, 1)) < 0.1
    spec = spec_for(m.shape, 0.05)
    assert np.allclose(compute_usdf(m, spec).values, brute_usdf(m, 0.05, spec.diagonal), rtol=0, atol=1e-15)


def test_truncation_caps_values():
    m = np.zeros((10, 10, 10), bool)
    m[0, 0, 0] = True
    f = compute_usdf(m, spec_for(m.shape, 0.1), truncation=0.35)
    assert f.values.max() == pytest.approx(0.35)
    assert f.values[0, 0, 3] == pytest.approx(0.3)


def _random_field(seed, shape=(10, 9, 8), res=0.07):
    rng = np.random.default_rng(seed)
    m = rng.random(shape) < 0.08
    return compute_sdf(m, spec_for(shape, res, origin=(-0.3, 0.2, 0.1))), rng


def test_query_at_centers_is_exact():
    f, rng = _random_field(0)
    idx = rng.integers(0, f.spec.dims, (50, 3))
    P = np.array([f.spec.center(i) for i in idx])
    d, _, clamped = f.query_many(P)
    assert np.array_equal(d, f.values[tuple(idx.T)])
    assert not clamped.any()


def test_query_midpoint_linear():
    spec = spec_for((2, 1, 1), 1.0)
    f = DistanceField(spec, np.array([0.2, 0.4]).reshape(2, 1, 1), "unsigned")
    q = f.query((1.0, 0.5, 0.5))
    assert q.distance == pytest.approx(0.3)
    assert q.gradient[0] == pytest.approx(0.2)
    assert q.gradient[1] == 0 and q.gradient[2] == 0


def test_query_bounded_by_cell_values():
    f, rng = _random_field(1)
    P = rng.uniform(f.spec.center((0, 0, 0)), f.spec.center(np.array(f.spec.dims) - 1), (300, 3))
    d = f.distance(P)
    u = (P - np.asarray(f.spec.origin)) / f.spec.resolution - 0.5
    i0 = np.clip(np.floor(u).astype(int), 0, np.array(f.spec.dims) - 2)
    for p, k, val in zip(P, i0, d):
        cell = f.values[k[0]:k[0] + 2, k[1]:k[1] + 2, k[2]:k[2] + 2]
        assert cell.min() - 1e-12 <= val <= cell.max() + 1e-12


def test_query_clamps_outside_points():
    f, _ = _random_field(2)
    hull_lo = f.spec.center((0, 0, 0))
    q_out = f.query(hull_lo - 5.0)
    q_in = f.query(hull_lo)
    assert q_out.clamped and not q_in.clamped
    assert q_out.distance == q_in.distance


def test_gradient_matches_finite_differences():
    f, rng = _random_field(4)
    lo = f.spec.center((0, 0, 0))
    hi = f.spec.center(np.array(f.spec.dims) - 1)
    P = rng.uniform(lo, hi, (400, 3))
    P = P[cell_distance(P, f.spec) > 1e-3]
    _, g, _ = f.query_many(P)
    for p, gp in zip(P, g):
        fd = central_diff(lambda x: f.distance(x[None])[0], p, h=1e-7)
        assert rel_err(gp, fd, floor=1e-3) < 1e-6


def test_field_values_are_readonly():
    f, _ = _random_field(5)
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0


def test_compute_field_dispatch_and_stages():
    m = np.zeros((6, 6, 6), bool)
    m[2, 2, 2] = True
    spec = spec_for(m.shape)
    s = compute_field(m, spec, "signed")
    u = compute_field(m, spec, "unsigned")
    assert {"snapshot", "transform", "inverse_transform", "subtraction"} <= set(s.stage_timings.stages)
    assert {"snapshot", "transform"} <= set(u.stage_timings.stages)
    with pytest.raises(ValueError):
        compute_field(m, spec, "other")


def test_benchmark_build_reports_ratio():
    rng = np.random.default_rng(0)
    spec = spec_for((32, 32, 32), 0.05)
    masks = [rng.random(spec.dims) < 0.02 for _ in range(10)]
    rows = benchmark_build(masks, spec)
    by = {r["kind"]: r for r in rows}
    assert by["signed"]["mean_ms"] > by["unsigned"]["mean_ms"]
    assert by["signed"]["signed_unsigned_ratio"] > 1
    assert by["unsigned"]["std_ms"] / by["unsigned"]["mean_ms"] < 0.5
    with pytest.raises(ValueError):
        benchmark_build([], spec)


def test_agrees_with_scipy_edt_on_anisotropic_shape():
    from scipy.ndimage import distance_transform_edt

    rng = np.random.default_rng(11)
    m = rng.random((23, 9, 31)) < 0.05
    f = compute_usdf(m, spec_for(m.shape, 0.05))
    assert np.allclose(f.values, 0.05 * distance_transform_edt(~m), rtol=0, atol=1e-12)
