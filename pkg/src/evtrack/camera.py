"""Sensor-domain types: events, pinhole intrinsics, sparse depth maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Event:
    """One asynchronous brightness-change sample.

    ``u``/``v`` are pixel column/row, ``t`` is seconds from stream start,
    ``polarity`` is +1/-1. Within a stream, timestamps are non-decreasing.
    """

    u: int
    v: int
    t: float
    polarity: int

    def __post_init__(self):
        if self.t < 0.0:
            raise ValueError("event timestamp must be >= 0")
        if self.polarity not in (-1, 1):
            raise ValueError("polarity must be +1 or -1")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole camera: ``u = cx + fx*X/Z``, ``v = cy + fy*Y/Z``."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (N,3) or (3,) to pixel coords.

        Points with Z <= 0 yield NaN pixels; callers treat those as
        outside the frustum.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.cx + self.fx * p[:, 0] / z
            v = self.cy + self.fy * p[:, 1] / z
        bad = z <= 0.0
        u = np.where(bad, np.nan, u)
        v = np.where(bad, np.nan, v)
        out = np.stack([u, v], axis=-1)
        return out[0] if np.asarray(points).ndim == 1 else out

    def back_project(self, u: float, v: float, depth: float) -> np.ndarray:
        """Camera-frame 3D point at pixel (u, v) and depth Z."""
        return np.array([
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ])

    def contains(self, u: float, v: float) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height


@dataclass
class DepthMap:
    """Sparse per-pixel depth snapshot.

    Only pixels observed by the depth source carry a value; everywhere else
    is invalid and reads as NaN. Valid depths are finite and positive.
    Stored sparsely (pixel coordinate arrays plus depth values) because the
    desk-scale simulator only renders small neighborhoods around projected
    feature points.
    """

    width: int
    height: int
    stamp: float = 0.0
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    depths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        self.depths = np.asarray(self.depths, dtype=float).reshape(-1)
        if np.any(~np.isfinite(self.depths)) or np.any(self.depths <= 0.0):
            raise ValueError("valid depths must be finite and positive")
        self._index = {}
        # first writer wins; render order puts nearer points last, so keep min
        for (u, v), d in zip(self.pixels, self.depths):
            key = (int(u), int(v))
            prev = self._index.get(key)
            if prev is None or d < prev:
                self._index[key] = float(d)

    def at(self, u: int, v: int) -> float:
        """Depth at a pixel; NaN where invalid."""
        return self._index.get((int(u), int(v)), float("nan"))

    def nearest_valid(self, u: float, v: float, max_radius: float) -> float:
        """Depth of the closest valid pixel within ``max_radius`` px (NaN if none)."""
        if self.pixels.shape[0] == 0:
            return float("nan")
        d2 = (self.pixels[:, 0] - u) ** 2 + (self.pixels[:, 1] - v) ** 2
        k = int(np.argmin(d2))
        if d2[k] > max_radius * max_radius:
            return float("nan")
        return float(self.depths[k])

    @property
    def n_valid(self) -> int:
        return len(self._index)
