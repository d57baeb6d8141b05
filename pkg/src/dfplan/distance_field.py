"""Exact Euclidean distance fields and interpolated queries.

The transform is the separable lower-envelope-of-parabolas method run along
z, then y, then x. Squared distances stay integral in voxel units, so the
result is exact.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .voxel_map import GridSpec, StageTimings

_INF = np.float64(1e30)


@njit(cache=True)
def _envelope_1d(f, out, v, z):
    # lower envelope of parabolas rooted at finite samples of f; sites at _INF are ignored
    n = f.shape[0]
    k = -1
    for q in range(n):
        fq = f[q]
        if fq >= 1e29:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        s = 0.0
        while k >= 0:
            p = v[k]
            s = ((fq + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = -np.inf if k == 0 else s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = 1e30
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        d = q - v[j]
        out[q] = d * d + f[v[j]]


@njit(cache=True)
def _sq_edt_3d(f):
    nx, ny, nz = f.shape
    m = max(nx, ny, nz)
    out = np.empty(m)
    v = np.empty(m, np.int64)
    z = np.empty(m + 1)
    # z lines are contiguous
    if nz > 1:
        for i in range(nx):
            for j in range(ny):
                _envelope_1d(f[i, j, :], out[:nz], v, z)
                f[i, j, :] = out[:nz]
    # y and x lines are gathered slab-wise into contiguous buffers (k-major)
    if ny > 1:
        buf = np.empty((nz, ny))
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    buf[k, j] = f[i, j, k]
            for k in range(nz):
                _envelope_1d(buf[k], out[:ny], v, z)
                buf[k, :] = out[:ny]
            for j in range(ny):
                for k in range(nz):
                    f[i, j, k] = buf[k, j]
    if nx > 1:
        buf = np.empty((nz, nx))
        for j in range(ny):
            for i in range(nx):
                for k in range(nz):
                    buf[k, i] = f[i, j, k]
            for k in range(nz):
                _envelope_1d(buf[k], out[:nx], v, z)
                buf[k, :] = out[:nx]
            for i in range(nx):
                for k in range(nz):
                    f[i, j, k] = buf[k, i]
    return f


def squared_edt(mask: np.ndarray) -> np.ndarray:
    """Squared distance (voxel units) from each voxel center to the nearest True voxel center.

    Returns an int64 array; voxels with no True voxel anywhere get -1.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError("mask must be 3-dimensional")
    f = np.where(mask, 0.0, _INF)
    _sq_edt_3d(f)
    return np.where(f >= 1e29, -1.0, f).astype(np.int64)


@dataclass(frozen=True)
class FieldQuery:
    point: np.ndarray
    distance: float
    gradient: np.ndarray
    clamped: bool


@dataclass(eq=False)
class DistanceField:
    """Per-voxel metric distances on a grid. Treated as immutable once built."""

    spec: GridSpec
    values: np.ndarray
    kind: str
    stage_timings: StageTimings = field(default_factory=StageTimings)

    def __post_init__(self):
        if self.kind not in ("signed", "unsigned"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.spec.dims:
            raise ValueError(f"values shape {self.values.shape} does not match dims {self.spec.dims}")
        self.values.setflags(write=False)
        self._origin = np.asarray(self.spec.origin)
        self._dims = np.asarray(self.spec.dims)

    def query(self, p) -> FieldQuery:
        d, g, c = self.query_many(np.asarray(p, dtype=float).reshape(1, 3))
        return FieldQuery(np.asarray(p, dtype=float), float(d[0]), g[0], bool(c[0]))

    def query_many(self, points: np.ndarray):
        """Trilinear distance and its analytic gradient at ``points`` of shape (..., 3).

        Points beyond the lattice of voxel centers are clamped onto it; the
        third return value flags them. The gradient is that of the
        interpolant at the clamped point.
        """
        pts = np.asarray(points, dtype=np.float64)
        lead = pts.shape[:-1]
        p = pts.reshape(-1, 3)
        res = self.spec.resolution
        u = (p - self._origin) / res - 0.5
        top = (self._dims - 1).astype(np.float64)
        clamped = np.any((u < -1e-9) | (u > top + 1e-9), axis=1)
        u = np.clip(u, 0.0, top)
        # snap to voxel centers so queries there reproduce stored values exactly
        r = np.rint(u)
        u = np.where(np.abs(u - r) < 1e-9, r, u)
        i0 = np.minimum(np.floor(u), np.maximum(top - 1, 0)).astype(np.int64)
        t = u - i0
        i1 = np.minimum(i0 + 1, self._dims - 1)
        V = self.values
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        x1, y1, z1 = i1[:, 0], i1[:, 1], i1[:, 2]
        tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
        c000 = V[x0, y0, z0]; c100 = V[x1, y0, z0]
        c010 = V[x0, y1, z0]; c110 = V[x1, y1, z0]
        c001 = V[x0, y0, z1]; c101 = V[x1, y0, z1]
        c011 = V[x0, y1, z1]; c111 = V[x1, y1, z1]
        c00 = c000 * (1 - tx) + c100 * tx
        c10 = c010 * (1 - tx) + c110 * tx
        c01 = c001 * (1 - tx) + c101 * tx
        c11 = c011 * (1 - tx) + c111 * tx
        c0 = c00 * (1 - ty) + c10 * ty
        c1 = c01 * (1 - ty) + c11 * ty
        dist = c0 * (1 - tz) + c1 * tz

        gx = ((c100 - c000) * (1 - ty) + (c110 - c010) * ty) * (1 - tz) \
            + ((c101 - c001) * (1 - ty) + (c111 - c011) * ty) * tz
        gy = (c10 - c00) * (1 - tz) + (c11 - c01) * tz
        gz = c1 - c0
        grad = np.stack([gx, gy, gz], axis=1) / res
        # degenerate axes (single voxel) carry no gradient
        grad[:, self._dims == 1] = 0.0
        return dist.reshape(lead), grad.reshape(lead + (3,)), clamped.reshape(lead)

    def distance(self, points) -> np.ndarray:
        return self.query_many(points)[0]


def _build_unsigned(mask, spec, timings, stage, truncation):
    t = time.perf_counter()
    sq = squared_edt(mask)
    vals = np.sqrt(np.maximum(sq, 0).astype(np.float64)) * spec.resolution
    vals[sq < 0] = spec.diagonal
    if truncation is not None:
        np.minimum(vals, truncation, out=vals)
    timings.add(stage, time.perf_counter() - t)
    return vals


def compute_usdf(mask, spec: GridSpec, truncation: float | None = None) -> DistanceField:
    """Unsigned field: metres from each voxel center to the nearest occupied voxel center."""
    timings = StageTimings()
    t = time.perf_counter()
    mask = np.asarray(mask, dtype=bool)
    timings.add("snapshot", time.perf_counter() - t)
    vals = _build_unsigned(mask, spec, timings, "transform", truncation)
    return DistanceField(spec, vals, "unsigned", timings)


def compute_sdf(mask, spec: GridSpec, truncation: float | None = None) -> DistanceField:
    """Signed field as the difference of the transforms of the mask and its complement."""
    timings = StageTimings()
    t = time.perf_counter()
    mask = np.asarray(mask, dtype=bool)
    inverse = ~mask
    timings.add("snapshot", time.perf_counter() - t)
    outside = _build_unsigned(mask, spec, timings, "transform", truncation)
    inside = _build_unsigned(inverse, spec, timings, "inverse_transform", truncation)
    t = time.perf_counter()
    vals = outside - inside
    timings.add("subtraction", time.perf_counter() - t)
    return DistanceField(spec, vals, "signed", timings)


def compute_field(mask, spec: GridSpec, kind: str, truncation: float | None = None) -> DistanceField:
    if kind == "signed":
        return compute_sdf(mask, spec, truncation)
    if kind == "unsigned":
        return compute_usdf(mask, spec, truncation)
    raise ValueError(f"unknown field kind {kind!r}")


def benchmark_build(masks, spec: GridSpec, kinds=("signed", "unsigned"), label=None) -> list[dict]:
    """Time field builds over a stream of masks.

    Returns one row per kind with mean/std milliseconds, per-stage means and,
    when both kinds are present, the signed/unsigned ratio on each row.
    """
    masks = list(masks)
    if not masks:
        raise ValueError("benchmark_build needs at least one mask")
    # warm the compiled kernels so the first sample is not a JIT outlier
    compute_usdf(np.zeros((2, 2, 2), bool), GridSpec((0, 0, 0), 1.0, (2, 2, 2)))
    rows = []
    for kind in kinds:
        samples, stages = [], {}
        for m in masks:
            t = time.perf_counter()
            f = compute_field(m, spec, kind)
            samples.append((time.perf_counter() - t) * 1e3)
            for k, v in f.stage_timings.stages.items():
                stages.setdefault(k, []).append(v * 1e3)
        rows.append({
            "label": label if label is not None else spec.resolution,
            "resolution": spec.resolution,
            "dims": "x".join(map(str, spec.dims)),
            "n_voxels": spec.n_voxels,
            "kind": kind,
            "n": len(samples),
            "mean_ms": float(np.mean(samples)),
            "std_ms": float(np.std(samples)),
            "median_ms": float(np.median(samples)),
            "stages_ms": {k: float(np.mean(v)) for k, v in stages.items()},
        })
    by_kind = {r["kind"]: r for r in rows}
    if "signed" in by_kind and "unsigned" in by_kind:
        ratio = by_kind["signed"]["mean_ms"] / by_kind["unsigned"]["mean_ms"]
        for r in rows:
            r["signed_unsigned_ratio"] = ratio
    return rows
