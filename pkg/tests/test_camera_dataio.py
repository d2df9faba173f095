import numpy as np
import pytest

from evtrack.camera import CameraIntrinsics, DepthMap, Event
from evtrack.dataio import (DataFormatError, EventStream, PoseTrace,
                            VelocityTrace, read_depth_snapshots, read_events,
                            read_pose_trace, read_velocity_trace,
                            write_depth_snapshots, write_events,
                            write_pose_trace, write_velocity_trace)


def make_intrinsics():
    return CameraIntrinsics(500.0, 480.0, 320.0, 240.0, 640, 480)


def test_event_validation():
    Event(10, 10, 0.5, 1)
    with pytest.raises(ValueError):
        Event(10, 10, -0.5, 1)
    with pytest.raises(ValueError):
        Event(10, 10, 0.5, 0)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(-1.0, 500.0, 320.0, 240.0, 640, 480)
    with pytest.raises(ValueError):
        CameraIntrinsics(500.0, 500.0, 700.0, 240.0, 640, 480)


def test_project_backproject_roundtrip():
    intr = make_intrinsics()
    rng = np.random.default_rng(0)
    for _ in range(50):
        u, v = rng.uniform(0, 639), rng.uniform(0, 479)
        d = rng.uniform(0.2, 4.0)
        p = intr.back_project(u, v, d)
        uv = intr.project(p)
        assert np.allclose(uv, [u, v], atol=1e-9)
    # behind the camera projects to NaN
    assert np.all(np.isnan(intr.project(np.array([0.0, 0.0, -1.0]))))


def test_depth_map_lookup_and_sentinel():
    m = DepthMap(640, 480, 0.0, np.array([[10, 20], [11, 20]]), np.array([1.5, 2.0]))
    assert m.at(10, 20) == 1.5
    assert np.isnan(m.at(100, 100))
    assert m.nearest_valid(12.0, 20.0, max_radius=2.0) == 2.0
    assert np.isnan(m.nearest_valid(100.0, 100.0, max_radius=5.0))
    with pytest.raises(ValueError):
        DepthMap(640, 480, 0.0, np.array([[1, 1]]), np.array([-0.5]))


def test_depth_map_overlap_keeps_nearest():
    m = DepthMap(640, 480, 0.0, np.array([[5, 5], [5, 5]]), np.array([2.0, 1.0]))
    assert m.at(5, 5) == 1.0


def test_event_stream_roundtrip(tmp_path):
    stream = EventStream(np.array([0.0, 0.001, 0.5]), np.array([1, 2, 3]),
                         np.array([4, 5, 6]), np.array([1, -1, 1]), 640, 480)
    path = tmp_path / "events.txt"
    write_events(path, stream)
    back = read_events(path)
    assert back.width == 640 and back.height == 480
    assert np.allclose(back.t, stream.t, atol=1e-9)
    assert np.array_equal(back.u, stream.u)
    assert np.array_equal(back.polarity, stream.polarity)


def test_event_stream_rejects_disorder(tmp_path):
    path = tmp_path / "events.txt"
    path.write_text("# 640 480\n0.5 1 1 +1\n0.1 2 2 -1\n")
    with pytest.raises(DataFormatError):
        read_events(path)


def test_event_file_header_required(tmp_path):
    path = tmp_path / "events.txt"
    path.write_text("0.5 1 1 +1\n")
    with pytest.raises(DataFormatError):
        read_events(path)


def test_pose_trace_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    q = rng.normal(0, 1, (5, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    trace = PoseTrace(np.arange(5) * 0.1, rng.normal(0, 1, (5, 3)), q)
    path = tmp_path / "pose.csv"
    write_pose_trace(path, trace)
    back = read_pose_trace(path)
    assert np.allclose(back.position, trace.position, atol=0)
    assert np.allclose(back.quaternion, trace.quaternion, atol=0)


def test_velocity_trace_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    trace = VelocityTrace(np.arange(4) * 0.01, rng.normal(0, 1, (4, 3)),
                          rng.normal(0, 1, (4, 3)))
    path = tmp_path / "vel.csv"
    write_velocity_trace(path, trace)
    back = read_velocity_trace(path)
    assert np.allclose(back.linear, trace.linear, atol=0)
    assert np.allclose(back.angular, trace.angular, atol=0)


def test_csv_header_mismatch(tmp_path):
    path = tmp_path / "pose.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DataFormatError):
        read_pose_trace(path)


def test_depth_snapshot_roundtrip(tmp_path):
    maps = [
        DepthMap(640, 480, 0.0, np.array([[1, 2], [3, 4]]), np.array([1.0, 2.0])),
        DepthMap(640, 480, 1 / 60, np.array([[5, 6]]), np.array([0.7])),
    ]
    path = tmp_path / "depth.txt"
    write_depth_snapshots(path, maps)
    back = read_depth_snapshots(path, 640, 480)
    assert len(back) == 2
    assert back[0].at(1, 2) == pytest.approx(1.0, abs=1e-9)
    assert back[1].stamp == pytest.approx(1 / 60, abs=1e-9)
    assert back[1].at(5, 6) == pytest.approx(0.7, abs=1e-9)
