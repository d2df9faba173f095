"""Quaternion and rigid-motion geometry helpers.

Conventions used across the whole package:

- Quaternions are Hamilton, scalar-first ``[w, x, y, z]``, right-handed.
- ``R(q)`` actively rotates object-frame vectors into the camera frame:
  ``v_cam = R(q) @ v_obj``.
- ``quat_multiply(a, b)`` is the Hamilton product ``a * b``, i.e. rotation
  ``b`` applied first, then ``a``; ``R(a*b) = R(a) @ R(b)``.
- Angular velocities are expressed in the camera frame; integrating a body
  spinning at ``w`` for ``dt`` seconds gives ``q_next = exp(w*dt) * q``
  (left multiplication by the camera-frame increment).
- Rotation vectors (axis-angle) are radians unless a function name says
  degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion ``w + xi + yj + zk``; normalized on construction.

    Immutable; all operations return new instances whose norm is within
    1e-9 of 1.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if n < 1e-12:
            raise ValueError("quaternion norm too small to normalize")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_wxyz(cls, q: np.ndarray) -> "UnitQuaternion":
        q = np.asarray(q, dtype=float)
        return cls(float(q[0]), float(q[1]), float(q[2]), float(q[3]))

    @classmethod
    def from_rotvec(cls, rv: np.ndarray) -> "UnitQuaternion":
        """Exponential map: rotation of ``|rv|`` radians about ``rv/|rv|``."""
        rv = np.asarray(rv, dtype=float)
        angle = float(np.linalg.norm(rv))
        if angle < 1e-12:
            # first-order expansion; renormalized by the constructor
            return cls(1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2])
        s = math.sin(0.5 * angle) / angle
        return cls(math.cos(0.5 * angle), rv[0] * s, rv[1] * s, rv[2] * s)

    def as_wxyz(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def multiply(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return quat_multiply(self, other)

    def to_matrix(self) -> np.ndarray:
        """3x3 rotation matrix with ``R @ v_obj = v_cam``."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ])

    def to_rotvec(self) -> np.ndarray:
        """Logarithm map, magnitude in [0, pi]; sign-of-q invariant."""
        w, v = self.w, np.array([self.x, self.y, self.z])
        if w < 0.0:
            w, v = -w, -v
        s = float(np.linalg.norm(v))
        if s < 1e-12:
            return 2.0 * v  # small-angle: rv ~ 2*vec part
        angle = 2.0 * math.atan2(s, w)
        return v * (angle / s)

    def rotate(self, vec: np.ndarray) -> np.ndarray:
        return self.to_matrix() @ np.asarray(vec, dtype=float)


def quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product ``a * b`` (rotation b first, then a), renormalized."""
    w1, x1, y1, z1 = a.w, a.x, a.y, a.z
    w2, x2, y2, z2 = b.w, b.x, b.y, b.z
    return UnitQuaternion(
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def skew(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix S with ``S @ x == cross(w, x)``."""
    w = np.asarray(w, dtype=float)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def rotation_vector_error(q_est: UnitQuaternion, q_gt: UnitQuaternion) -> float:
    """Geodesic angle between two orientations, in degrees, in [0, 180].

    Magnitude of the rotation vector of ``q_gt^-1 * q_est``; invariant to
    the q/-q double cover of either argument.
    """
    delta = quat_multiply(q_gt.conjugate(), q_est)
    return math.degrees(float(np.linalg.norm(delta.to_rotvec())))


def quat_weighted_mean(
    quats: list[UnitQuaternion],
    weights: np.ndarray,
    init: UnitQuaternion,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> UnitQuaternion:
    """Weighted barycentric mean on SO(3) by iterating in the tangent space.

    Weights must sum to 1 but may be negative (scaled sigma-point sets).
    Convergence is fast when ``init`` is near the mean, which holds for
    sigma-point clouds where ``init`` is the center point.
    """
    weights = np.asarray(weights, dtype=float)
    mean = init
    for _ in range(max_iter):
        inv = mean.conjugate()
        err = np.zeros(3)
        for q, wgt in zip(quats, weights):
            err += wgt * quat_multiply(inv, q).to_rotvec()
        mean = quat_multiply(mean, UnitQuaternion.from_rotvec(err))
        if float(np.linalg.norm(err)) < tol:
            break
    return mean


def rotation_translation_integral(omega: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact screw-motion propagators over an interval of length ``tau``.

    For the rigid motion ``p_dot = v_o + omega x p`` with constant inputs,
    the solution is ``p(tau) = R @ p(0) + V @ v_o`` where ``R = exp(skew(omega)*tau)``
    and ``V = integral_0^tau exp(skew(omega)*s) ds``. Returns ``(R, V)``.
    """
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega)) * tau
    S = skew(omega)
    if abs(theta) < 1e-8:
        # series to O(theta^2): keeps V accurate near zero rotation
        R = np.eye(3) + S * tau + 0.5 * (S @ S) * tau * tau
        V = np.eye(3) * tau + 0.5 * S * tau * tau + (S @ S) * (tau ** 3) / 6.0
        return R, V
    n = omega / np.linalg.norm(omega)
    N = skew(n)
    R = np.eye(3) + math.sin(theta) * N + (1.0 - math.cos(theta)) * (N @ N)
    w = float(np.linalg.norm(omega))
    V = (
        np.eye(3) * tau
        + ((1.0 - math.cos(theta)) / (w * w)) * S
        + ((tau - math.sin(theta) / w) / (w * w)) * (S @ S)
    )
    return R, V


def integrate_screw(
    position: np.ndarray,
    orientation: UnitQuaternion,
    v_o: np.ndarray,
    omega: np.ndarray,
    tau: float,
) -> tuple[np.ndarray, UnitQuaternion]:
    """Exact pose after moving with constant camera-frame screw (v_o, omega)."""
    R, V = rotation_translation_integral(omega, tau)
    p = R @ np.asarray(position, dtype=float) + V @ np.asarray(v_o, dtype=float)
    q = quat_multiply(UnitQuaternion.from_rotvec(np.asarray(omega, dtype=float) * tau), orientation)
    return p, q
