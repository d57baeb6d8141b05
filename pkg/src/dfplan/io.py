"""Field dumps, point-cloud streams and per-step timing tables."""

from __future__ import annotations

import csv
import json
import struct

import numpy as np

from .distance_field import DistanceField
from .voxel_map import GridSpec, PointCloudFrame, StageTimings

_MAGIC = b"DFLD"


def write_field(path, field: DistanceField, extra: dict | None = None):
    """Binary dump: magic, header length, JSON header, little-endian float64 values in C order."""
    header = {"spec": field.spec.to_dict(), "kind": field.kind, "dtype": "<f8", "shape": list(field.values.shape)}
    if extra:
        header["extra"] = extra
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> tuple[DistanceField, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a field dump")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        values = np.frombuffer(fh.read(), dtype=header["dtype"]).reshape(header["shape"])
    s = header["spec"]
    spec = GridSpec(tuple(s["origin"]), s["resolution"], tuple(s["dims"]))
    return DistanceField(spec, values.astype(float), header["kind"]), header


def write_cloud_stream(path, frames):
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps({"t": f.timestamp, "origin": list(map(float, f.sensor_origin)),
                                 "points": np.asarray(f.points, float).tolist()}) + "\n")


def read_cloud_stream(path) -> list[PointCloudFrame]:
    out = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(PointCloudFrame(np.array(d["origin"], float), np.array(d["points"], float).reshape(-1, 3),
                                           float(d["t"])))
            except (KeyError, ValueError) as e:
                raise ValueError(f"{path}:{ln}: bad frame ({e})") from None
    return out


def write_timings_csv(path, rows: list[tuple[float, StageTimings]]):
    stages = sorted({k for _, t in rows for k in t.stages})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clock"] + [f"{s}_ms" for s in stages] + ["total_ms"])
        for clock, t in rows:
            w.writerow([clock] + [f"{1e3 * t.stages.get(s, 0.0):.4f}" for s in stages] + [f"{1e3 * t.total:.4f}"])
