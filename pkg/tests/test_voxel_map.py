import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfplan.voxel_map import (Cuboid, Cylinder, GridSpec, LogOddsParams, OccupancyGrid, PointCloudFrame,
                              occupancy_snapshot)


def unit_grid(n=16):
    return GridSpec((0.0, 0.0, 0.0), 1.0, (n, n, n))


def test_gridspec_centers_and_validation():
    spec = GridSpec((1.0, -2.0, 0.5), 0.1, (4, 5, 1))
    assert np.allclose(spec.center((0, 0, 0)), (1.05, -1.95, 0.55))
    assert np.allclose(spec.center((3, 4, 0)), (1.35, -1.55, 0.55))
    assert spec.planar
    with pytest.raises(ValueError):
        GridSpec((0, 0, 0), 0.0, (2, 2, 2))
    with pytest.raises(ValueError):
        GridSpec((0, 0, 0), 0.1, (2, 0, 2))


def test_single_ray_hit_and_misses():
    g = OccupancyGrid(unit_grid())
    p = g.params
    frame = PointCloudFrame((2.5, 8.5, 8.5), [(7.5, 8.5, 8.5)])
    g.integrate_cloud(frame, floor_band=0.0)
    assert g.logodds[7, 8, 8] == pytest.approx(p.hit_delta)
    for i in range(2, 7):
        assert g.logodds[i, 8, 8] == pytest.approx(max(p.miss_delta, p.clamp_min))
    touched = np.count_nonzero(g.logodds)
    assert touched == 6


def test_floor_band_suppresses_hit_but_still_clears():
    spec = GridSpec((0.0, 0.0, 0.0), 0.05, (16, 16, 16))
    g = OccupancyGrid(spec)
    origin = spec.center((2, 8, 0))
    end = origin + np.array([5 * 0.05, 0.0, 0.0])
    origin[2] = end[2] = 0.01
    g.integrate_cloud(PointCloudFrame(origin, [end]), floor_band=0.03)
    assert g.logodds[7, 8, 0] == 0.0
    assert np.all(g.logodds[2:7, 8, 0] == pytest.approx(g.params.miss_delta))


def test_repeated_hits_saturate():
    g = OccupancyGrid(unit_grid())
    frame = PointCloudFrame((2.5, 8.5, 8.5), [(7.5, 8.5, 8.5)])
    for _ in range(20):
        g.integrate_cloud(frame)
    assert g.logodds[7, 8, 8] == g.params.clamp_max
    assert g.logodds[3, 8, 8] == g.params.clamp_min


def test_zero_length_ray_is_counted_and_skipped():
    g = OccupancyGrid(unit_grid())
    g.integrate_cloud(PointCloudFrame((2.5, 2.5, 2.5), [(2.5, 2.5, 2.5)]))
    assert g.diagnostics["zero_length"] == 1
    assert not np.any(g.logodds)


def test_point_outside_grid_clears_up_to_boundary():
    g = OccupancyGrid(unit_grid())
    g.integrate_cloud(PointCloudFrame((10.5, 4.5, 4.5), [(40.0, 4.5, 4.5)]))
    assert np.all(g.logodds[10:, 4, 4] < 0)
    assert not np.any(g.logodds > 0)


def test_point_cloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloudFrame((0, 0, 0), [(np.nan, 0, 0)])


def test_integration_records_stage_timings():
    g = OccupancyGrid(unit_grid())
    t = g.integrate_cloud(PointCloudFrame((1.5, 1.5, 1.5), [(9.5, 3.5, 2.5)]))
    assert {"pcl_processing", "raycast"} <= set(t.stages)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ray_order_independent(seed):
    rng = np.random.default_rng(seed)
    spec = unit_grid(12)
    origin = np.array([6.2, 6.3, 6.1])
    # rays along distinct axis-aligned rows never share voxels apart from the origin voxel
    ends = [origin + np.array(v) for v in ((4.7, 0, 0), (-4.9, 0, 0), (0, 4.6, 0), (0, -5.5, 0), (0, 0, 4.8))]
    ends = np.array(ends)
    a = OccupancyGrid(spec)
    b = OccupancyGrid(spec)
    a.integrate_cloud(PointCloudFrame(origin, ends))
    b.integrate_cloud(PointCloudFrame(origin, ends[rng.permutation(len(ends))]))
    assert np.array_equal(a.logodds, b.logodds)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 19), st.floats(-3, 19), st.floats(-3, 19)), min_size=1, max_size=30),
       st.floats(0.0, 5.0))
def test_logodds_stay_clamped(points, band):
    g = OccupancyGrid(unit_grid(), LogOddsParams(hit_delta=2.0, miss_delta=-1.5))
    for _ in range(3):
        g.integrate_cloud(PointCloudFrame((8.1, 7.9, 8.3), points), floor_band=band)
        g.rasterize(Cuboid((3, 3, 3), (1, 1, 1)), "set_free")
    assert g.logodds.min() >= g.params.clamp_min
    assert g.logodds.max() <= g.params.clamp_max


def test_rasterize_exact_block():
    g = OccupancyGrid(unit_grid())
    g.clear()
    g.rasterize(Cuboid((5.5, 5.5, 5.5), (1.0, 1.0, 1.0)))
    assert g.snapshot().sum() == 27
    assert g.snapshot()[4:7, 4:7, 4:7].all()


def test_rasterize_outside_is_noop():
    g = OccupancyGrid(unit_grid())
    before = g.logodds.copy()
    g.rasterize(Cuboid((50, 50, 50), (1, 1, 1)))
    assert np.array_equal(before, g.logodds)


def _centers(spec):
    return np.stack(np.meshgrid(*(spec.axis_centers(a) for a in range(3)), indexing="ij"), -1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 14), st.floats(-2, 14), st.floats(-2, 14),
                          st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5)), min_size=1, max_size=4))
def test_rasterize_union_matches_point_in_box(boxes):
    spec = GridSpec((0.0, 0.0, 0.0), 1.0, (12, 12, 12))
    g = OccupancyGrid(spec)
    g.clear()
    P = _centers(spec)
    oracle = np.zeros(spec.dims, bool)
    for x, y, z, a, b, c in boxes:
        lo, hi = np.array([x - a, y - b, z - c]), np.array([x + a, y + b, z + c])
        oracle |= np.all((P >= lo) & (P <= hi), axis=-1)
        g.rasterize(Cuboid((x, y, z), (a, b, c)))
    assert np.array_equal(g.snapshot(), oracle)


def test_cylinder_rasterization_matches_oracle():
    spec = GridSpec((0.0, 0.0, 0.0), 0.1, (20, 20, 10))
    g = OccupancyGrid(spec)
    g.clear()
    cyl = Cylinder((1.0, 1.0, 0.5), 0.35, 0.6)
    g.rasterize(cyl)
    P = _centers(spec)
    r2 = (P[..., 0] - 1.0) ** 2 + (P[..., 1] - 1.0) ** 2
    oracle = (r2 <= 0.35**2) & (np.abs(P[..., 2] - 0.5) <= 0.3)
    assert np.array_equal(g.snapshot(), oracle)


def test_snapshot_threshold_and_immutability():
    g = OccupancyGrid(unit_grid(4))
    g.clear()
    assert not g.snapshot().any()
    g.logodds[1, 2, 3] = g.params.clamp_max
    assert g.snapshot().sum() == 1
    g.logodds[0, 0, 0] = g.params.occupied_threshold
    snap = occupancy_snapshot(g)
    assert snap[0, 0, 0]
    g.clear()
    assert snap.sum() == 2
    with pytest.raises(ValueError):
        snap[0, 0, 0] = False


@pytest.mark.parametrize("shape", [Cuboid((1.0, 2.0, 0.5), (0.3, 0.2, 0.4)), Cylinder((1.0, 2.0, 0.5), 0.3, 0.8)])
def test_shape_distance_and_ray(shape):
    rng = np.random.default_rng(0)
    P = rng.uniform(-1, 3, (500, 3))
    d = shape.distance(P)
    inside = shape.contains(P)
    assert np.all(d[inside] == 0)
    assert np.all(d[~inside] > 0)
    # a ball of radius d around an outside point never reaches the shape
    dirs = rng.normal(size=(500, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for p, dd, u in zip(P[~inside][:50], d[~inside][:50], dirs):
        t = shape.ray_hit(p, u)
        assert t >= dd - 1e-9
