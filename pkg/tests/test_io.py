import numpy as np
import pytest

from dfplan.distance_field import compute_sdf
from dfplan.io import read_cloud_stream, read_field, write_cloud_stream, write_field, write_timings_csv
from dfplan.voxel_map import GridSpec, PointCloudFrame, StageTimings


def test_field_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    spec = GridSpec((0.1, -0.2, 0.0), 0.05, (7, 6, 5))
    f = compute_sdf(rng.random(spec.dims) < 0.2, spec)
    write_field(tmp_path / "f.dfld", f, {"clock": 1.5})
    g, header = read_field(tmp_path / "f.dfld")
    assert np.array_equal(g.values, f.values)
    assert g.spec == spec and g.kind == "signed"
    assert header["extra"] == {"clock": 1.5}
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_field(tmp_path / "junk")


def test_cloud_stream_round_trip(tmp_path):
    frames = [PointCloudFrame((0, 0, 1), [(1, 2, 3), (4, 5, 6)], 0.0), PointCloudFrame((1, 0, 1), [], 0.1)]
    write_cloud_stream(tmp_path / "c.jsonl", frames)
    back = read_cloud_stream(tmp_path / "c.jsonl")
    assert len(back) == 2
    assert np.array_equal(back[0].points, frames[0].points)
    assert back[1].points.shape == (0, 3) and back[1].timestamp == 0.1
    (tmp_path / "bad.jsonl").write_text('{"t": 0}\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        read_cloud_stream(tmp_path / "bad.jsonl")


def test_timing_csv(tmp_path):
    a, b = StageTimings(), StageTimings()
    a.add("raycast", 0.002)
    b.add("transform", 0.001)
    write_timings_csv(tmp_path / "t.csv", [(0.0, a), (0.1, b)])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "clock,raycast_ms,transform_ms,total_ms"
    assert lines[1] == "0.0,2.0000,0.0000,2.0000"
