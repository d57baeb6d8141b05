"""Deterministic dynamic environment: static shapes plus scripted movers.

Each ``step`` re-rasterizes the scene (omniscient sensing) or ray-casts a
synthetic depth frame (raycast sensing) and republishes a distance field only
when the occupancy actually changed.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .distance_field import DistanceField, compute_field
from .voxel_map import Cuboid, Cylinder, GridSpec, LogOddsParams, OccupancyGrid, PointCloudFrame, StageTimings


@dataclass
class MovingObstacle:
    shape: Cuboid | Cylinder
    waypoints: list[tuple[float, tuple[float, float, float]]]
    name: str = ""

    def __post_init__(self):
        self.waypoints = [(float(t), tuple(float(v) for v in c)) for t, c in self.waypoints]
        if not self.waypoints:
            raise ValueError("a moving obstacle needs at least one waypoint")
        times = [t for t, _ in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    def center_at(self, t: float) -> np.ndarray:
        times = np.array([w[0] for w in self.waypoints])
        pts = np.array([w[1] for w in self.waypoints])
        if t <= times[0]:
            return pts[0].copy()
        if t >= times[-1]:
            return pts[-1].copy()
        k = int(np.searchsorted(times, t, side="right")) - 1
        if t == times[k]:
            return pts[k].copy()
        a = (t - times[k]) / (times[k + 1] - times[k])
        return (1 - a) * pts[k] + a * pts[k + 1]

    def shape_at(self, t: float):
        return self.shape.moved_to(self.center_at(t))


@dataclass
class SensorSchedule:
    """Fixed-pose synthetic depth sensor casting a regular fan of rays."""

    origin: tuple[float, float, float]
    yaw_range: tuple[float, float] = (-np.pi, np.pi)
    pitch_range: tuple[float, float] = (-1.2, 0.3)
    n_yaw: int = 90
    n_pitch: int = 30
    max_range: float = 5.0
    floor_z: float = 0.0

    def directions(self) -> np.ndarray:
        yaw = np.linspace(*self.yaw_range, self.n_yaw, endpoint=False)
        pitch = np.linspace(*self.pitch_range, self.n_pitch)
        Y, P = np.meshgrid(yaw, pitch, indexing="ij")
        return np.stack([np.cos(P) * np.cos(Y), np.cos(P) * np.sin(Y), np.sin(P)], -1).reshape(-1, 3)


@dataclass
class StepResult:
    field: DistanceField
    changed: bool
    timings: StageTimings
    clock: float


class WorldSim:
    def __init__(self, spec: GridSpec, static=(), moving=(), kind: str = "signed", sensing: str = "omniscient",
                 sensor: SensorSchedule | None = None, floor_band: float = 0.03,
                 logodds: LogOddsParams | None = None):
        if kind not in ("signed", "unsigned"):
            raise ValueError(f"unknown field kind {kind!r}")
        if sensing not in ("omniscient", "raycast"):
            raise ValueError(f"unknown sensing mode {sensing!r}")
        if sensing == "raycast" and sensor is None:
            raise ValueError("raycast sensing needs a sensor schedule")
        self.spec = spec
        self.static = list(static)
        self.moving = list(moving)
        self.kind = kind
        self.sensing = sensing
        self.sensor = sensor
        self.floor_band = floor_band
        self.grid = OccupancyGrid(spec, logodds)
        self.grid.clear(free=True)
        self.clock = 0.0
        self.field: DistanceField | None = None
        self.version = 0
        self._mask = None
        self.history: list[dict] = []

    def shapes_at(self, t: float):
        return self.static + [m.shape_at(t) for m in self.moving]

    def occupancy_oracle(self, t: float) -> np.ndarray:
        """Per-voxel point-in-shape union, evaluated independently of the grid state."""
        spec = self.spec
        g = np.meshgrid(*(spec.axis_centers(a) for a in range(3)), indexing="ij")
        P = np.stack(g, -1)
        out = np.zeros(spec.dims, bool)
        for s in self.shapes_at(t):
            out |= s.contains(P)
        return out

    def _synthetic_frame(self, t: float) -> PointCloudFrame:
        s = self.sensor
        o = np.asarray(s.origin, float)
        shapes = self.shapes_at(t)
        pts = []
        for d in s.directions():
            best = s.max_range
            if d[2] < 0:
                best = min(best, (s.floor_z - o[2]) / d[2])
            for sh in shapes:
                best = min(best, sh.ray_hit(o, d))
            pts.append(o + best * d)
        return PointCloudFrame(o, np.array(pts), t)

    def _sense(self, t: float, timings: StageTimings):
        if self.sensing == "omniscient":
            tt = time.perf_counter()
            self.grid.clear(free=True)
            for s in self.shapes_at(t):
                self.grid.rasterize(s, "set_occupied")
            timings.add("rasterize", time.perf_counter() - tt)
        else:
            tt = time.perf_counter()
            frame = self._synthetic_frame(t)
            timings.add("synthesize_cloud", time.perf_counter() - tt)
            timings.merge(self.grid.integrate_cloud(frame, self.floor_band))

    def step(self, dt: float) -> StepResult:
        if dt <= 0:
            raise ValueError("dt must be positive")
        return self.advance_to(self.clock + dt)

    def advance_to(self, t: float) -> StepResult:
        if t < self.clock:
            raise ValueError("the world clock is monotone")
        timings = StageTimings()
        self.clock = t
        self._sense(t, timings)
        tt = time.perf_counter()
        mask = self.grid.snapshot()
        timings.add("snapshot", time.perf_counter() - tt)
        changed = self._mask is None or not np.array_equal(mask, self._mask)
        if changed:
            field = compute_field(mask, self.spec, self.kind)
            timings.merge(field.stage_timings)
            self._mask = mask
            self.field = field
            self.version += 1
        self.history.append({"clock": t, "changed": changed, "version": self.version})
        return StepResult(self.field, changed, timings, t)

    def field_digest(self) -> str:
        return hashlib.sha256(self.field.values.tobytes()).hexdigest() if self.field is not None else ""
