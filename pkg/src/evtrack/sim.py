"""Desk-scale synthetic scene generator.

Produces everything the tracking stack consumes, without hardware: rigid
6-DoF trajectories built from piecewise-constant camera-frame screws,
ideal events from feature points crossing pixel-displacement thresholds,
sparse depth snapshots, a low-rate noisy pose source, and exact ground
truth traces.  Everything is a pure function of (config, seed).

The event model is geometric: each feature point's projected pixel path is
tracked continuously and an event fires whenever the path has moved one
threshold since that point's previous event.  There is no brightness or
contrast model; polarity is assigned from the sign of the horizontal
displacement since the last event.  This produces exactly the
spatio-temporal structure the triplet matcher assumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .camera import CameraIntrinsics, DepthMap
from .dataio import EventStream, PoseTrace, VelocityTrace
from .geometry import (UnitQuaternion, integrate_screw, quat_multiply,
                       rotation_translation_integral, skew)
from .pose import PoseObservation


@dataclass(frozen=True)
class TrajectorySegment:
    """Constant camera-frame screw (v_o, omega) held for ``duration`` seconds.

    ``v_o`` is the velocity of the object point instantaneously at the
    camera origin; a point at position p moves with p_dot = v_o + omega x p.
    """

    duration: float
    v_o: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_o", np.asarray(self.v_o, dtype=float).reshape(3))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        if self.duration <= 0:
            raise ValueError("segment duration must be > 0")


@dataclass
class Trajectory:
    """Piecewise-constant-screw rigid motion; pose continuous across segments."""

    initial_position: np.ndarray
    initial_orientation: UnitQuaternion
    segments: list[TrajectorySegment]
    sample_rate: float = 100.0

    def __post_init__(self):
        self.initial_position = np.asarray(self.initial_position, dtype=float).reshape(3)
        if not self.segments:
            raise ValueError("trajectory needs at least one segment")
        starts = [0.0]
        poses = [(self.initial_position.copy(), self.initial_orientation)]
        for seg in self.segments:
            p, q = poses[-1]
            poses.append(integrate_screw(p, q, seg.v_o, seg.omega, seg.duration))
            starts.append(starts[-1] + seg.duration)
        self._starts = np.array(starts)
        self._poses = poses

    @property
    def end_time(self) -> float:
        return float(self._starts[-1])

    def _segment_index(self, t: float) -> int:
        i = int(np.searchsorted(self._starts, t, side="right")) - 1
        return min(max(i, 0), len(self.segments) - 1)

    def pose_at(self, t: float) -> tuple[np.ndarray, UnitQuaternion]:
        """Exact pose at time t (clamped to the trajectory span)."""
        t = min(max(t, 0.0), self.end_time)
        i = self._segment_index(t)
        p0, q0 = self._poses[i]
        seg = self.segments[i]
        return integrate_screw(p0, q0, seg.v_o, seg.omega, t - self._starts[i])

    def velocity_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Segment screw at time t; right-continuous at boundaries."""
        seg = self.segments[self._segment_index(min(max(t, 0.0), self.end_time))]
        return seg.v_o.copy(), seg.omega.copy()


@dataclass
class ObjectModel:
    """Feature points (meters, object frame) standing in for a textured object.

    ``contrast`` flags which points generate events (all of them, by
    default); every point contributes to depth rendering.
    """

    points: np.ndarray
    contrast: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.points.shape[0] < 8:
            raise ValueError("object model needs at least 8 feature points")
        if self.contrast is None:
            self.contrast = np.ones(self.points.shape[0], dtype=bool)
        else:
            self.contrast = np.asarray(self.contrast, dtype=bool).reshape(-1)


def box_model(sx: float, sy: float, sz: float, per_edge: int = 3) -> ObjectModel:
    """Corners plus ``per_edge`` interior points along each of the 12 edges."""
    h = np.array([sx, sy, sz]) / 2.0
    corners = np.array([[x, y, z] for x in (-h[0], h[0])
                        for y in (-h[1], h[1]) for z in (-h[2], h[2])])
    edges = [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7),
             (0, 4), (1, 5), (2, 6), (3, 7)]
    pts = [corners]
    fracs = np.arange(1, per_edge + 1) / (per_edge + 1)
    for a, b in edges:
        pts.append(corners[a] + fracs[:, None] * (corners[b] - corners[a]))
    return ObjectModel(np.concatenate(pts, axis=0))


def cylinder_model(radius: float, height: float, n_around: int = 12,
                   n_side: int = 3) -> ObjectModel:
    """Points on both rim circles and along vertical side lines."""
    ang = 2.0 * np.pi * np.arange(n_around) / n_around
    rims = []
    for z in (-height / 2.0, height / 2.0):
        rims.append(np.stack([radius * np.cos(ang), radius * np.sin(ang),
                              np.full(n_around, z)], axis=1))
    sides = []
    zs = np.linspace(-height / 2.0, height / 2.0, n_side + 2)[1:-1]
    for k in range(0, n_around, max(1, n_around // 6)):
        for z in zs:
            sides.append([radius * math.cos(ang[k]), radius * math.sin(ang[k]), z])
    return ObjectModel(np.concatenate([*rims, np.array(sides)], axis=0))


def edge_model(length: float, n_points: int) -> ObjectModel:
    """A single dense straight edge (along the object y-axis).

    Deliberately degenerate: used for aperture-problem scenarios where
    only the edge-normal flow component is observable.
    """
    y = np.linspace(-length / 2.0, length / 2.0, n_points)
    pts = np.zeros((n_points, 3))
    pts[:, 1] = y
    return ObjectModel(pts)


@dataclass
class SimConfig:
    """Event/depth/pose sensor model parameters."""

    intrinsics: CameraIntrinsics
    threshold_px: float = 1.0           # pixel displacement per event
    jitter_std: float = 0.0             # event timestamp jitter (s)
    pose_rate: float = 5.0              # mock pose estimator rate (Hz)
    pose_noise_pos: float = 0.02        # position noise std per axis (m)
    pose_noise_deg: float = 5.0         # rotation-vector noise std per axis (deg)
    depth_rate: float = 60.0            # depth snapshot rate (Hz)
    depth_patch_radius: int = 1         # depth written to (2r+1)^2 px per point
    dropout_speed_px: float = 0.0       # pixel-speed threshold for dropout (0: off)
    dropout_prob: float = 0.0
    path_oversampling: float = 4.0      # marching samples per threshold crossing

    def __post_init__(self):
        if self.threshold_px <= 0 or self.pose_rate <= 0 or self.depth_rate <= 0:
            raise ValueError("rates and threshold must be positive")


@numba.njit(cache=True)
def _extract_crossings(ts, px, py, valid, threshold, state,
                       out_t, out_x, out_y, out_pol):
    """Scan one point's sampled pixel path, emitting threshold crossings.

    ``state`` is the 7-slot carry-over between segments:
    [have_ref, ref_x, ref_y, prev_ok, prev_x, prev_y, prev_t].
    Invalid samples (behind camera / out of frame) suspend the point.
    """
    count = 0
    have_ref = state[0] > 0.5
    rx, ry = state[1], state[2]
    prev_ok = state[3] > 0.5
    pxv, pyv, ptv = state[4], state[5], state[6]
    for k in range(ts.shape[0]):
        if not valid[k]:
            have_ref = False
            prev_ok = False
            continue
        x = px[k]
        y = py[k]
        t = ts[k]
        if not have_ref:
            rx, ry = x, y
            have_ref = True
            pxv, pyv, ptv = x, y, t
            prev_ok = True
            continue
        # multiple crossings inside one step are walked along the chord
        while True:
            dx = x - rx
            dy = y - ry
            d = math.sqrt(dx * dx + dy * dy)
            if d < threshold:
                break
            if prev_ok:
                dpx = math.sqrt((pxv - rx) ** 2 + (pyv - ry) ** 2)
            else:
                dpx = 0.0
            denom = d - dpx
            if denom > 1e-15 and dpx < threshold:
                a = (threshold - dpx) / denom
            else:
                a = 1.0
            if a < 0.0:
                a = 0.0
            if a > 1.0:
                a = 1.0
            et = ptv + a * (t - ptv)
            ex = pxv + a * (x - pxv)
            ey = pyv + a * (y - pyv)
            out_t[count] = et
            out_x[count] = ex
            out_y[count] = ey
            out_pol[count] = 1 if ex - rx >= 0.0 else -1
            count += 1
            rx, ry = ex, ey
            # continue from the emitted event toward the current sample
            pxv, pyv, ptv = ex, ey, et
        pxv, pyv, ptv = x, y, t
        prev_ok = True
    state[0] = 1.0 if have_ref else 0.0
    state[1], state[2] = rx, ry
    state[3] = 1.0 if prev_ok else 0.0
    state[4], state[5], state[6] = pxv, pyv, ptv
    return count


@numba.njit(cache=True)
def _enforce_strictly_increasing(t):
    for i in range(1, t.shape[0]):
        if t[i] <= t[i - 1]:
            t[i] = np.nextafter(t[i - 1], np.inf)


def _screw_point_paths(p0: np.ndarray, v_o: np.ndarray, omega: np.ndarray,
                       taus: np.ndarray) -> np.ndarray:
    """Camera positions (T,N,3) of points p0 (N,3) under a constant screw.

    Uses the closed form p(tau) = R(tau) p0 + V(tau) v_o with Rodrigues
    coefficients vectorized over the sample times.
    """
    w = float(np.linalg.norm(omega))
    if w < 1e-12:
        return p0[None, :, :] + taus[:, None, None] * v_o[None, None, :]
    n = omega / w
    N = skew(n)
    S = skew(omega)
    Np = p0 @ N.T
    NNp = Np @ N.T
    Sv = S @ v_o
    SSv = S @ Sv
    th = w * taus
    s, c = np.sin(th), np.cos(th)
    a = (1.0 - c) / (w * w)
    b = (taus - s / w) / (w * w)
    return (p0[None, :, :]
            + s[:, None, None] * Np[None, :, :]
            + (1.0 - c)[:, None, None] * NNp[None, :, :]
            + taus[:, None, None] * v_o[None, None, :]
            + a[:, None, None] * Sv[None, None, :]
            + b[:, None, None] * SSv[None, None, :])


def generate_events(model: ObjectModel, traj: Trajectory, config: SimConfig,
                    rng: np.random.Generator | None = None) -> EventStream:
    """Ideal events from all contrast points over the whole trajectory.

    Deterministic given (model, traj, config, rng state).  Timestamps are
    strictly increasing after the merge; a static object yields no events.
    """
    intr = config.intrinsics
    contrast_pts = model.points[model.contrast]
    n_pts = contrast_pts.shape[0]
    states = np.zeros((n_pts, 7))
    all_t, all_x, all_y, all_p = [], [], [], []
    for seg_i, seg in enumerate(traj.segments):
        p_start, q_start = traj._poses[seg_i]
        t_start = float(traj._starts[seg_i])
        pts_cam0 = contrast_pts @ q_start.to_matrix().T + p_start
        # marching resolution from the fastest projected point speed
        speeds = []
        for tau in np.linspace(0.0, seg.duration, 5):
            pos, _ = integrate_screw(p_start, q_start, seg.v_o, seg.omega, tau)
            pts = _screw_point_paths(pts_cam0, seg.v_o, seg.omega, np.array([tau]))[0]
            vel = seg.v_o[None, :] + np.cross(np.broadcast_to(seg.omega, pts.shape), pts)
            z = np.maximum(pts[:, 2], 1e-6)
            du = intr.fx * (vel[:, 0] * z - pts[:, 0] * vel[:, 2]) / (z * z)
            dv = intr.fy * (vel[:, 1] * z - pts[:, 1] * vel[:, 2]) / (z * z)
            speeds.append(np.max(np.hypot(du, dv)))
        v_px = max(float(np.max(np.array(speeds))), 1.0)
        dt_step = config.threshold_px / (config.path_oversampling * v_px)
        n_samp = int(np.ceil(seg.duration / dt_step)) + 1
        n_samp = min(max(n_samp, 2), 2_000_000)
        taus = np.linspace(0.0, seg.duration, n_samp)
        paths = _screw_point_paths(pts_cam0, seg.v_o, seg.omega, taus)  # (T,N,3)
        z = paths[:, :, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.cx + intr.fx * paths[:, :, 0] / z
            v = intr.cy + intr.fy * paths[:, :, 1] / z
        valid = (z > 1e-6) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        stamps = t_start + taus
        cap = int(v_px * seg.duration / config.threshold_px) + 8
        for p_i in range(n_pts):
            out_t = np.empty(cap)
            out_x = np.empty(cap)
            out_y = np.empty(cap)
            out_pol = np.empty(cap, dtype=np.int8)
            cnt = _extract_crossings(stamps, np.ascontiguousarray(u[:, p_i]),
                                     np.ascontiguousarray(v[:, p_i]),
                                     np.ascontiguousarray(valid[:, p_i]),
                                     config.threshold_px, states[p_i],
                                     out_t, out_x, out_y, out_pol)
            if cnt:
                all_t.append(out_t[:cnt].copy())
                all_x.append(out_x[:cnt].copy())
                all_y.append(out_y[:cnt].copy())
                all_p.append(out_pol[:cnt].copy())
    if not all_t:
        return EventStream(np.zeros(0), np.zeros(0, dtype=np.int64),
                           np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int8),
                           intr.width, intr.height)
    t = np.concatenate(all_t)
    x = np.concatenate(all_x)
    y = np.concatenate(all_y)
    pol = np.concatenate(all_p)
    if config.jitter_std > 0.0:
        if rng is None:
            raise ValueError("timestamp jitter requires an rng")
        t = np.maximum(t + rng.normal(0.0, config.jitter_std, t.shape[0]), 0.0)
    iu = np.floor(x + 0.5).astype(np.int64)
    iv = np.floor(y + 0.5).astype(np.int64)
    keep = (iu >= 0) & (iu < intr.width) & (iv >= 0) & (iv < intr.height)
    t, iu, iv, pol = t[keep], iu[keep], iv[keep], pol[keep]
    order = np.lexsort((np.arange(t.shape[0]), t))
    t, iu, iv, pol = np.ascontiguousarray(t[order]), iu[order], iv[order], pol[order]
    _enforce_strictly_increasing(t)
    return EventStream(t, iu, iv, pol, intr.width, intr.height)


def render_depth(model: ObjectModel, traj: Trajectory, stamp: float,
                 config: SimConfig) -> DepthMap:
    """Sparse depth: each visible point writes Z into a small pixel patch.

    Overlapping patches keep the smaller depth (nearer surface wins).
    """
    intr = config.intrinsics
    pos, q = traj.pose_at(stamp)
    pts = model.points @ q.to_matrix().T + pos
    px = intr.project(pts)
    r = config.depth_patch_radius
    pix, depths = [], []
    for k in range(pts.shape[0]):
        if pts[k, 2] <= 0 or not np.all(np.isfinite(px[k])):
            continue
        cu = int(math.floor(px[k, 0] + 0.5))
        cv = int(math.floor(px[k, 1] + 0.5))
        for dv in range(-r, r + 1):
            for du in range(-r, r + 1):
                uu, vv = cu + du, cv + dv
                if 0 <= uu < intr.width and 0 <= vv < intr.height:
                    pix.append((uu, vv))
                    depths.append(pts[k, 2])
    if not pix:
        return DepthMap(intr.width, intr.height, stamp)
    return DepthMap(intr.width, intr.height, stamp,
                    np.array(pix, dtype=np.int64), np.array(depths))


def render_depth_sequence(model: ObjectModel, traj: Trajectory,
                          config: SimConfig) -> list[DepthMap]:
    n = int(math.floor(traj.end_time * config.depth_rate)) + 1
    return [render_depth(model, traj, k / config.depth_rate, config) for k in range(n)]


def _center_pixel_speed(traj: Trajectory, stamp: float, intr: CameraIntrinsics) -> float:
    pos, _ = traj.pose_at(stamp)
    v_o, omega = traj.velocity_at(stamp)
    vel = v_o + np.cross(omega, pos)
    z = pos[2]
    if z <= 1e-6:
        return 0.0
    du = intr.fx * (vel[0] * z - pos[0] * vel[2]) / (z * z)
    dv = intr.fy * (vel[1] * z - pos[1] * vel[2]) / (z * z)
    return float(math.hypot(du, dv))


def mock_pose_estimator(traj: Trajectory, config: SimConfig,
                        rng: np.random.Generator) -> list[PoseObservation]:
    """Ground truth sampled at the pose rate with Gaussian noise.

    Position noise is per-axis N(0, pose_noise_pos^2); orientation noise is
    a rotation-vector perturbation with per-axis std pose_noise_deg,
    composed on the left (camera-frame wobble).  When the object-center
    pixel speed exceeds ``dropout_speed_px``, the sample is dropped with
    probability ``dropout_prob`` (motion-blur failures of the upstream
    estimator).
    """
    out = []
    n = int(math.floor(traj.end_time * config.pose_rate)) + 1
    sig_rot = math.radians(config.pose_noise_deg)
    for k in range(n):
        stamp = k / config.pose_rate
        pos, q = traj.pose_at(stamp)
        noise_p = rng.normal(0.0, config.pose_noise_pos, 3)
        noise_r = rng.normal(0.0, sig_rot, 3)
        if config.dropout_speed_px > 0 and config.dropout_prob > 0:
            if (_center_pixel_speed(traj, stamp, config.intrinsics) > config.dropout_speed_px
                    and rng.uniform() < config.dropout_prob):
                continue
        q_meas = quat_multiply(UnitQuaternion.from_rotvec(noise_r), q)
        out.append(PoseObservation(pos + noise_p, q_meas, stamp))
    return out


def export_ground_truth(traj: Trajectory, rate: float) -> tuple[PoseTrace, VelocityTrace]:
    """Exact pose and screw-velocity traces sampled at ``rate`` Hz."""
    if rate <= 0:
        raise ValueError("rate must be > 0")
    n = int(math.floor(traj.end_time * rate)) + 1
    t = np.arange(n) / rate
    pos = np.zeros((n, 3))
    quat = np.zeros((n, 4))
    lin = np.zeros((n, 3))
    ang = np.zeros((n, 3))
    for k in range(n):
        p, q = traj.pose_at(t[k])
        pos[k] = p
        quat[k] = q.as_wxyz()
        lin[k], ang[k] = traj.velocity_at(t[k])
    return PoseTrace(t, pos, quat), VelocityTrace(t, lin, ang)


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def _oscillating_trajectory(rng: np.random.Generator, duration: float,
                            peak_speed: float, peak_omega: float,
                            micro_dt: float = 0.01,
                            z_nominal: float = 0.85) -> Trajectory:
    """Smooth bounded random motion discretized into constant-screw steps.

    The object center follows a Lissajous-style oscillation around the
    optical axis (never leaves the frame; accelerations stay finite, as a
    handheld or thrown object's would) and the angular velocity oscillates
    about a drifting axis.  Each ``micro_dt`` slice is one constant-screw
    segment whose v_o reproduces the center path exactly.
    """
    amp = np.array([0.11, 0.085, 0.05]) * rng.uniform(0.85, 1.15, 3)
    f0 = peak_speed / amp[0]
    freqs = f0 * np.array([1.0, rng.uniform(0.55, 0.8), rng.uniform(0.2, 0.35)])
    phases = rng.uniform(0.0, 2.0 * np.pi, 3)
    # rotation mostly about the view axis, with milder tilt: all six axes
    # move, but in-plane rotation dominates (the component a single camera
    # observes best)
    w_amp = peak_omega * np.array([rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3),
                                   rng.uniform(0.7, 1.0)])
    w_freqs = f0 * rng.uniform(0.2, 0.5, 3)
    w_phases = rng.uniform(0.0, 2.0 * np.pi, 3)

    def center(t):
        return (np.array([0.0, 0.0, z_nominal])
                + amp * np.sin(freqs * t + phases))

    def omega_of(t):
        return w_amp * np.sin(w_freqs * t + w_phases)

    n = int(math.ceil(duration / micro_dt))
    segments = []
    p = center(0.0)
    for k in range(n):
        t0 = k * micro_dt
        h = min(micro_dt, duration - t0)
        if h <= 0:
            break
        omega = omega_of(t0 + 0.5 * h)
        R, V = rotation_translation_integral(omega, h)
        p_next = center(t0 + h)
        v_o = np.linalg.solve(V, p_next - R @ p)
        segments.append(TrajectorySegment(h, v_o, omega))
        p = p_next
    return Trajectory(center(0.0), UnitQuaternion.identity(), segments)


def build_preset(name: str, seed: int, duration: float = 10.0) -> tuple[ObjectModel, Trajectory]:
    """Bundled scenario presets.

    - ``regular``: box object, pixel speeds around 40-120 px/s.
    - ``faster``: same object driven at pixel speeds beyond 1000 px/s.
    - ``aperture``: a single dense straight edge translating obliquely,
      so only the edge-normal flow component is observable.
    """
    rng = np.random.default_rng(seed)
    if name == "regular":
        model = box_model(0.24, 0.18, 0.12, per_edge=8)
        traj = _oscillating_trajectory(rng, duration, peak_speed=0.16, peak_omega=0.6)
    elif name == "faster":
        model = box_model(0.24, 0.18, 0.12, per_edge=8)
        traj = _oscillating_trajectory(rng, duration, peak_speed=2.2, peak_omega=1.8)
    elif name == "aperture":
        model = edge_model(0.28, 96)
        seg_dur = 0.8
        n_seg = int(math.ceil(duration / seg_dur))
        speed = 0.12
        segments = []
        sign = 1.0
        for k in range(n_seg):
            ang = math.radians(45.0) + rng.normal(0.0, 0.1)
            v = sign * speed * np.array([math.cos(ang), math.sin(ang), 0.0])
            d = seg_dur if (k + 1) * seg_dur <= duration else duration - k * seg_dur
            segments.append(TrajectorySegment(max(d, 1e-3), v, np.zeros(3)))
            sign = -sign
        traj = Trajectory(np.array([0.0, 0.0, 0.85]), UnitQuaternion.identity(), segments)
    else:
        raise ValueError(f"unknown preset '{name}'")
    return model, traj
