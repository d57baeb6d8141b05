"""Log-odds voxel occupancy grid.

Updated either by ray casting synthetic point clouds or by rasterizing
analytic shapes. ``nz == 1`` grids are planar and share every code path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel lattice. ``origin`` is the min corner of voxel (0, 0, 0)."""

    origin: tuple[float, float, float]
    resolution: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "resolution", float(self.resolution))
        if len(self.origin) != 3 or len(self.dims) != 3:
            raise ValueError("origin and dims must have three components")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if min(self.dims) < 1:
            raise ValueError(f"dims must be >= 1, got {self.dims}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def planar(self) -> bool:
        return self.dims[2] == 1

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def diagonal(self) -> float:
        """Length of the grid diagonal in metres; used as the 'no obstacle' distance."""
        return self.resolution * float(np.sqrt(np.sum(np.square(self.dims, dtype=float))))

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + self.resolution * np.asarray(self.dims)

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.resolution * (np.arange(self.dims[axis]) + 0.5)

    def center(self, index) -> np.ndarray:
        return np.asarray(self.origin) + self.resolution * (np.asarray(index, dtype=float) + 0.5)

    def world_to_index(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.floor((p - np.asarray(self.origin)) / self.resolution).astype(np.int64)

    def contains_index(self, index) -> np.ndarray:
        idx = np.asarray(index)
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "resolution": self.resolution, "dims": list(self.dims)}


@dataclass(frozen=True)
class Cuboid:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "half_extents", tuple(float(v) for v in self.half_extents))
        if min(self.half_extents) <= 0:
            raise ValueError(f"cuboid half extents must be positive, got {self.half_extents}")

    def moved_to(self, center) -> "Cuboid":
        return Cuboid(tuple(center), self.half_extents)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c, h = np.asarray(self.center), np.asarray(self.half_extents)
        return c - h, c + h

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        lo, hi = self.bounds()
        return np.all((p >= lo) & (p <= hi), axis=-1)

    def ray_hit(self, origin, direction) -> float:
        """Smallest t >= 0 with origin + t*direction on the box, or inf."""
        lo, hi = self.bounds()
        o, d = np.asarray(origin, float), np.asarray(direction, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - o) / d
            t2 = (hi - o) / d
        tmin = np.where(d == 0, np.where((o >= lo) & (o <= hi), -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(d == 0, np.where((o >= lo) & (o <= hi), np.inf, -np.inf), np.maximum(t1, t2))
        t_enter, t_exit = np.max(tmin), np.min(tmax)
        if t_enter > t_exit or t_exit < 0:
            return np.inf
        return max(t_enter, 0.0)

    def distance(self, points) -> np.ndarray:
        """Exact Euclidean distance to the solid box (zero inside)."""
        p = np.asarray(points, dtype=float)
        lo, hi = self.bounds()
        return np.linalg.norm(np.maximum(np.maximum(lo - p, p - hi), 0.0), axis=-1)

    def to_dict(self) -> dict:
        return {"type": "cuboid", "center": list(self.center), "half_extents": list(self.half_extents)}


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder; ``center`` is the midpoint of its axis."""

    center: tuple[float, float, float]
    radius: float
    height: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder radius and height must be positive")

    def moved_to(self, center) -> "Cylinder":
        return Cylinder(tuple(center), self.radius, self.height)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        h = np.array([self.radius, self.radius, 0.5 * self.height])
        return c - h, c + h

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        c = np.asarray(self.center)
        radial = (p[..., 0] - c[0]) ** 2 + (p[..., 1] - c[1]) ** 2
        return (radial <= self.radius**2) & (np.abs(p[..., 2] - c[2]) <= 0.5 * self.height)

    def ray_hit(self, origin, direction) -> float:
        o, d = np.asarray(origin, float), np.asarray(direction, float)
        c = np.asarray(self.center)
        zlo, zhi = c[2] - 0.5 * self.height, c[2] + 0.5 * self.height
        best = np.inf
        # side wall
        ox, oy = o[0] - c[0], o[1] - c[1]
        a = d[0] ** 2 + d[1] ** 2
        b = 2 * (ox * d[0] + oy * d[1])
        cc = ox**2 + oy**2 - self.radius**2
        if a > 0:
            disc = b * b - 4 * a * cc
            if disc >= 0:
                for t in sorted(((-b - np.sqrt(disc)) / (2 * a), (-b + np.sqrt(disc)) / (2 * a))):
                    if t >= 0 and zlo <= o[2] + t * d[2] <= zhi:
                        best = min(best, t)
                        break
        # caps
        if d[2] != 0:
            for z in (zlo, zhi):
                t = (z - o[2]) / d[2]
                if t >= 0:
                    x, y = o[0] + t * d[0] - c[0], o[1] + t * d[1] - c[1]
                    if x * x + y * y <= self.radius**2:
                        best = min(best, t)
        if self.contains(o):
            return 0.0
        return best

    def distance(self, points) -> np.ndarray:
        """Exact Euclidean distance to the solid cylinder (zero inside)."""
        p = np.asarray(points, dtype=float)
        c = np.asarray(self.center)
        radial = np.hypot(p[..., 0] - c[0], p[..., 1] - c[1])
        dr = np.maximum(radial - self.radius, 0.0)
        dz = np.maximum(np.abs(p[..., 2] - c[2]) - 0.5 * self.height, 0.0)
        return np.hypot(dr, dz)

    def to_dict(self) -> dict:
        return {"type": "cylinder", "center": list(self.center), "radius": self.radius, "height": self.height}


@dataclass
class LogOddsParams:
    hit_delta: float = 0.85
    miss_delta: float = -0.4
    clamp_min: float = -2.0
    clamp_max: float = 3.5
    occupied_threshold: float = 0.0

    def __post_init__(self):
        if self.clamp_min > self.clamp_max:
            raise ValueError("clamp_min must not exceed clamp_max")


@dataclass
class PointCloudFrame:
    sensor_origin: np.ndarray
    points: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.sensor_origin = np.asarray(self.sensor_origin, dtype=float).reshape(3)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not (np.all(np.isfinite(self.sensor_origin)) and np.all(np.isfinite(self.points))):
            raise ValueError("point cloud frame contains non-finite values")


@dataclass
class StageTimings:
    """Wall-clock seconds per named stage, in insertion order."""

    stages: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, seconds: float):
        self.stages[name] = self.stages.get(name, 0.0) + seconds

    def merge(self, other: "StageTimings"):
        for k, v in other.stages.items():
            self.add(k, v)

    @property
    def total(self) -> float:
        return sum(self.stages.values())


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@njit(cache=True)
def _clip_segment(p0, p1, lo, hi):
    # Liang-Barsky clip of p0->p1 against [lo, hi]; returns (t0, t1) or (1, 0) when missed
    t0, t1 = 0.0, 1.0
    for a in range(3):
        d = p1[a] - p0[a]
        if d == 0.0:
            if p0[a] < lo[a] or p0[a] > hi[a]:
                return 1.0, 0.0
            continue
        ta = (lo[a] - p0[a]) / d
        tb = (hi[a] - p0[a]) / d
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return 1.0, 0.0
    return t0, t1


@njit(cache=True)
def _cast_rays(logodds, origin, res, sensor, points, apply_hit,
               hit, miss, cmin, cmax, counters):
    nx, ny, nz = logodds.shape
    dims = np.array([nx, ny, nz])
    lo = origin.copy()
    hi = origin + res * dims
    for r in range(points.shape[0]):
        p1 = points[r]
        length = np.sqrt(np.sum((p1 - sensor) ** 2))
        if length < 1e-12:
            counters[0] += 1
            continue
        t0, t1 = _clip_segment(sensor, p1, lo, hi)
        if t0 > t1:
            counters[1] += 1
            continue
        a = sensor + t0 * (p1 - sensor)
        b = sensor + t1 * (p1 - sensor)
        end_inside = t1 >= 1.0
        d = p1 - sensor
        cur = np.empty(3, np.int64)
        end = np.empty(3, np.int64)
        step = np.empty(3, np.int64)
        tmax = np.empty(3)
        tdelta = np.empty(3)
        for k in range(3):
            cur[k] = min(max(int(np.floor((a[k] - origin[k]) / res)), 0), dims[k] - 1)
            end[k] = min(max(int(np.floor((b[k] - origin[k]) / res)), 0), dims[k] - 1)
            if d[k] > 0:
                step[k] = 1
                tmax[k] = (origin[k] + (cur[k] + 1) * res - sensor[k]) / d[k]
                tdelta[k] = res / d[k]
            elif d[k] < 0:
                step[k] = -1
                tmax[k] = (origin[k] + cur[k] * res - sensor[k]) / d[k]
                tdelta[k] = -res / d[k]
            else:
                step[k] = 0
                tmax[k] = np.inf
                tdelta[k] = np.inf
        n = abs(end[0] - cur[0]) + abs(end[1] - cur[1]) + abs(end[2] - cur[2])
        for _ in range(n):
            v = logodds[cur[0], cur[1], cur[2]] + miss
            logodds[cur[0], cur[1], cur[2]] = min(max(v, cmin), cmax)
            # step along the axis whose boundary is crossed first, restricted to axes still short of the end voxel
            best = -1
            for k in range(3):
                if cur[k] != end[k] and (best < 0 or tmax[k] < tmax[best]):
                    best = k
            cur[best] += step[best]
            tmax[best] += tdelta[best]
        if end_inside:
            if apply_hit[r]:
                v = logodds[cur[0], cur[1], cur[2]] + hit
                logodds[cur[0], cur[1], cur[2]] = min(max(v, cmin), cmax)
        else:
            # the real endpoint lies beyond the grid, so the boundary voxel was traversed
            v = logodds[cur[0], cur[1], cur[2]] + miss
            logodds[cur[0], cur[1], cur[2]] = min(max(v, cmin), cmax)


class OccupancyGrid:
    """Clamped log-odds occupancy over a :class:`GridSpec`. Single writer."""

    def __init__(self, spec: GridSpec, params: LogOddsParams | None = None, initial: float = 0.0):
        self.spec = spec
        self.params = params or LogOddsParams()
        init = min(max(initial, self.params.clamp_min), self.params.clamp_max)
        self.logodds = np.full(spec.dims, init, dtype=np.float64)
        # zero_length: skipped degenerate rays; outside: rays that never touch the grid
        self.diagnostics = {"zero_length": 0, "outside": 0}

    def copy(self) -> "OccupancyGrid":
        g = OccupancyGrid(self.spec, self.params)
        g.logodds = self.logodds.copy()
        g.diagnostics = dict(self.diagnostics)
        return g

    def clear(self, free: bool = True):
        self.logodds[...] = self.params.clamp_min if free else 0.0

    def integrate_cloud(self, frame: PointCloudFrame, floor_band: float = 0.0) -> StageTimings:
        """Ray-cast every point from the sensor origin.

        Traversed voxels get ``miss_delta``; the endpoint voxel gets ``hit_delta``
        unless the point lies at or below ``floor_band`` (it still clears).
        """
        if floor_band < 0:
            raise ValueError("floor_band must be >= 0")
        timings = StageTimings()
        t = time.perf_counter()
        pts = np.ascontiguousarray(frame.points, dtype=np.float64)
        apply_hit = pts[:, 2] > floor_band
        timings.add("pcl_processing", time.perf_counter() - t)

        t = time.perf_counter()
        counters = np.zeros(2, np.int64)
        p = self.params
        _cast_rays(self.logodds, np.asarray(self.spec.origin), self.spec.resolution,
                   np.ascontiguousarray(frame.sensor_origin), pts, apply_hit,
                   p.hit_delta, p.miss_delta, p.clamp_min, p.clamp_max, counters)
        self.diagnostics["zero_length"] += int(counters[0])
        self.diagnostics["outside"] += int(counters[1])
        timings.add("raycast", time.perf_counter() - t)
        return timings

    def shape_mask(self, shape) -> np.ndarray:
        """Boolean mask of voxels whose center lies inside ``shape`` (closed)."""
        spec = self.spec
        mask = np.zeros(spec.dims, dtype=bool)
        lo, hi = shape.bounds()
        sl = []
        for a in range(3):
            c = spec.axis_centers(a)
            idx = np.nonzero((c >= lo[a]) & (c <= hi[a]))[0]
            if idx.size == 0:
                return mask
            sl.append(slice(idx[0], idx[-1] + 1))
        gx, gy, gz = np.meshgrid(*(spec.axis_centers(a)[sl[a]] for a in range(3)), indexing="ij")
        mask[tuple(sl)] = shape.contains(np.stack([gx, gy, gz], axis=-1))
        return mask

    def rasterize(self, shape, mode: str = "set_occupied"):
        if mode not in ("set_occupied", "set_free"):
            raise ValueError(f"unknown rasterize mode {mode!r}")
        value = self.params.clamp_max if mode == "set_occupied" else self.params.clamp_min
        self.logodds[self.shape_mask(shape)] = value

    rasterize_cuboid = rasterize

    def snapshot(self) -> np.ndarray:
        """Immutable occupied-voxel mask (``logodds >= occupied_threshold``)."""
        return _readonly(self.logodds >= self.params.occupied_threshold)

    def occupied(self, index) -> bool:
        return bool(self.logodds[tuple(index)] >= self.params.occupied_threshold)


def occupancy_snapshot(grid: OccupancyGrid) -> np.ndarray:
    return grid.snapshot()
