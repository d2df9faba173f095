"""File formats shared by the simulator, the flow engine, and the harness.

- Event stream: text, header ``# width height``, then one event per line
  ``t u v p`` with t in seconds (9 decimal places) and p in {+1, -1}.
- Pose traces / pose observations: CSV ``t,tx,ty,tz,qw,qx,qy,qz``.
- Velocity traces: CSV ``t,vx,vy,vz,wx,wy,wz``.
- Depth snapshots: text lines ``stamp u v d`` grouped by stamp.
- Dataset manifest: JSON naming every artifact plus the generating seed
  and configuration (no wall-clock fields, so reruns are byte-identical).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import DepthMap
from .geometry import UnitQuaternion


class DataFormatError(Exception):
    """Malformed or out-of-contract input data (maps to CLI exit code 2)."""


@dataclass
class EventStream:
    """Column-oriented event stream; timestamps non-decreasing."""

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    polarity: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.int64)
        self.v = np.asarray(self.v, dtype=np.int64)
        self.polarity = np.asarray(self.polarity, dtype=np.int8)

    def __len__(self) -> int:
        return self.t.shape[0]

    def validate(self) -> None:
        if len(self.t) == 0:
            return
        if np.any(np.diff(self.t) < 0):
            raise DataFormatError("event stream timestamps are out of order")
        if np.any(self.t < 0):
            raise DataFormatError("event timestamps must be >= 0")
        if (np.any(self.u < 0) or np.any(self.u >= self.width)
                or np.any(self.v < 0) or np.any(self.v >= self.height)):
            raise DataFormatError("event pixel outside sensor bounds")


@dataclass
class PoseTrace:
    """Time-stamped positions (N,3) and wxyz quaternions (N,4)."""

    t: np.ndarray
    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.position = np.asarray(self.position, dtype=float).reshape(-1, 3)
        self.quaternion = np.asarray(self.quaternion, dtype=float).reshape(-1, 4)

    def __len__(self) -> int:
        return self.t.shape[0]

    def quaternion_at(self, i: int) -> UnitQuaternion:
        return UnitQuaternion.from_wxyz(self.quaternion[i])


@dataclass
class VelocityTrace:
    """Time-stamped linear (N,3) and angular (N,3) velocities.

    ``cov`` optionally carries the 6x6 estimate covariance per sample; it is
    an in-memory companion only and is not serialized.
    """

    t: np.ndarray
    linear: np.ndarray
    angular: np.ndarray
    cov: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.linear = np.asarray(self.linear, dtype=float).reshape(-1, 3)
        self.angular = np.asarray(self.angular, dtype=float).reshape(-1, 3)

    def __len__(self) -> int:
        return self.t.shape[0]


def write_events(path: str | Path, stream: EventStream) -> None:
    with open(path, "w") as f:
        f.write(f"# {stream.width} {stream.height}\n")
        for t, u, v, p in zip(stream.t, stream.u, stream.v, stream.polarity):
            f.write(f"{t:.9f} {u} {v} {'+1' if p > 0 else '-1'}\n")


def read_events(path: str | Path) -> EventStream:
    path = Path(path)
    try:
        with open(path) as f:
            header = f.readline().split()
            if len(header) != 3 or header[0] != "#":
                raise DataFormatError(f"{path}:1: expected header '# width height'")
            width, height = int(header[1]), int(header[2])
            t, u, v, p = [], [], [], []
            for lineno, line in enumerate(f, start=2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 4:
                    raise DataFormatError(f"{path}:{lineno}: expected 't u v p'")
                t.append(float(parts[0]))
                u.append(int(parts[1]))
                v.append(int(parts[2]))
                p.append(int(parts[3]))
    except (ValueError, OSError) as exc:
        raise DataFormatError(f"cannot read event file {path}: {exc}") from exc
    stream = EventStream(np.array(t), np.array(u), np.array(v), np.array(p), width, height)
    stream.validate()
    return stream


def write_pose_trace(path: str | Path, trace: PoseTrace) -> None:
    with open(path, "w") as f:
        f.write("t,tx,ty,tz,qw,qx,qy,qz\n")
        for i in range(len(trace)):
            p, q = trace.position[i], trace.quaternion[i]
            f.write(f"{trace.t[i]:.9f},{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},"
                    f"{q[0]:.17g},{q[1]:.17g},{q[2]:.17g},{q[3]:.17g}\n")


def read_pose_trace(path: str | Path) -> PoseTrace:
    data = _read_csv(path, "t,tx,ty,tz,qw,qx,qy,qz")
    return PoseTrace(data[:, 0], data[:, 1:4], data[:, 4:8])


def write_velocity_trace(path: str | Path, trace: VelocityTrace) -> None:
    with open(path, "w") as f:
        f.write("t,vx,vy,vz,wx,wy,wz\n")
        for i in range(len(trace)):
            v, w = trace.linear[i], trace.angular[i]
            f.write(f"{trace.t[i]:.9f},{v[0]:.17g},{v[1]:.17g},{v[2]:.17g},"
                    f"{w[0]:.17g},{w[1]:.17g},{w[2]:.17g}\n")


def read_velocity_trace(path: str | Path) -> VelocityTrace:
    data = _read_csv(path, "t,vx,vy,vz,wx,wy,wz")
    return VelocityTrace(data[:, 0], data[:, 1:4], data[:, 4:7])


def _read_csv(path: str | Path, expected_header: str) -> np.ndarray:
    path = Path(path)
    try:
        with open(path) as f:
            header = f.readline().strip()
            if header != expected_header:
                raise DataFormatError(
                    f"{path}:1: expected header '{expected_header}', got '{header}'")
            rows = []
            for lineno, line in enumerate(f, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != len(expected_header.split(",")):
                    raise DataFormatError(f"{path}:{lineno}: wrong column count")
                rows.append([float(x) for x in parts])
    except (ValueError, OSError) as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        return np.zeros((0, len(expected_header.split(","))))
    return np.array(rows)


def write_depth_snapshots(path: str | Path, maps: list[DepthMap]) -> None:
    with open(path, "w") as f:
        for m in maps:
            for (u, v), d in zip(m.pixels, m.depths):
                f.write(f"{m.stamp:.9f} {u} {v} {d:.9f}\n")


def read_depth_snapshots(path: str | Path, width: int, height: int) -> list[DepthMap]:
    path = Path(path)
    try:
        raw = np.loadtxt(path, ndmin=2)
    except (ValueError, OSError) as exc:
        raise DataFormatError(f"cannot read depth file {path}: {exc}") from exc
    if raw.size == 0:
        return []
    if raw.shape[1] != 4:
        raise DataFormatError(f"{path}: expected 'stamp u v d' columns")
    maps = []
    # rows are grouped by stamp in write order
    stamps, starts = np.unique(raw[:, 0], return_index=True)
    order = np.argsort(starts)
    bounds = list(np.sort(starts)) + [raw.shape[0]]
    for k, _ in enumerate(order):
        lo, hi = bounds[k], bounds[k + 1]
        chunk = raw[lo:hi]
        maps.append(DepthMap(
            width=width, height=height, stamp=float(chunk[0, 0]),
            pixels=chunk[:, 1:3].astype(np.int64), depths=chunk[:, 3],
        ))
    maps.sort(key=lambda m: m.stamp)
    return maps


def write_manifest(path: str | Path, entries: dict) -> None:
    with open(path, "w") as f:
        json.dump(entries, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path: str | Path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read manifest {path}: {exc}") from exc
