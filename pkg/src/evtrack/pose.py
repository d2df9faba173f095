"""6-DoF pose tracking: quaternion error-state UKF driven by tracked velocity.

The state is position plus a unit quaternion; uncertainty lives on a
6-dim error state (translation, 3-dim rotation vector composed
multiplicatively on the right of the reference quaternion:
q = q_ref * exp(dtheta)).  Propagation applies the camera-frame screw
(v_o, omega) supplied by the velocity tracker:

    t+  = (I + skew(omega) * dt) t + v_o * dt
    q+  = exp(omega * dt) * q

The skew term is the linear motion induced at position t by rotation
about the camera origin.  The rotation increment uses the exact
exponential rather than the first-order transition matrix: identical to
first order, better conditioned at large |omega|*dt.

Correction consumes absolute pose observations with an identity
measurement model on the error state; the rotation innovation is the
rotation vector of q_pred^-1 * q_meas, and observation quaternions are
sign-aligned to the prediction first.  When no observation exists at a
step, correction is simply not invoked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import PoseTrace, VelocityTrace
from .geometry import UnitQuaternion, quat_multiply, quat_weighted_mean, skew


@dataclass(frozen=True)
class PoseState:
    """Position (m), orientation, and 6x6 error covariance (trans, rot)."""

    position: np.ndarray
    orientation: UnitQuaternion
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float).reshape(6, 6))
        if np.max(np.abs(self.P - self.P.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")


@dataclass(frozen=True)
class PoseObservation:
    """Absolute pose sample from a low-rate global estimator."""

    position: np.ndarray
    orientation: UnitQuaternion
    stamp: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass
class UkfConfig:
    """Noise densities and sigma-point spread parameters.

    ``q_t``/``q_q`` are per-second process noise rates on the error state
    (scaled by dt each propagation); ``r_t``/``r_q`` are the observation
    noise covariances. All accept a scalar (isotropic) or a full 3x3.
    ``fold_velocity_cov`` adds the velocity tracker's covariance (scaled
    by dt) onto the process noise instead of estimating velocity jointly;
    ``vel_cov_inflation`` scales it, since flow quantization errors are
    correlated across batches and the filter's claimed covariance
    understates the true velocity error.
    """

    q_t: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(3))
    q_q: np.ndarray = field(default_factory=lambda: np.radians(0.5) ** 2 * np.eye(3))
    r_t: np.ndarray = field(default_factory=lambda: 0.02 ** 2 * np.eye(3))
    r_q: np.ndarray = field(default_factory=lambda: np.radians(5.0) ** 2 * np.eye(3))
    spread: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    fold_velocity_cov: bool = True
    vel_cov_inflation: float = 4.0

    def __post_init__(self):
        for name in ("q_t", "q_q", "r_t", "r_q"):
            val = getattr(self, name)
            if np.ndim(val) == 0:
                val = float(val) * np.eye(3)
            setattr(self, name, np.asarray(val, dtype=float).reshape(3, 3))


def _sigma_weights(n: int, config: UkfConfig) -> tuple[float, np.ndarray, np.ndarray]:
    lam = config.spread ** 2 * (n + config.kappa) - n
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = lam / (n + lam) + (1.0 - config.spread ** 2 + config.beta)
    return n + lam, wm, wc


def _chol_psd(P: np.ndarray) -> np.ndarray:
    jitter = 0.0
    for _ in range(8):
        try:
            return np.linalg.cholesky(P + jitter * np.eye(P.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-14)
    raise np.linalg.LinAlgError("covariance not positive semidefinite")


def _sigma_deltas(P: np.ndarray, scale: float) -> np.ndarray:
    """(2n+1, n) error-state deviations: center then +/- scaled columns."""
    n = P.shape[0]
    L = _chol_psd(P) * np.sqrt(scale)
    return np.concatenate([np.zeros((1, n)), L.T, -L.T], axis=0)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def propagate(state: PoseState, v_o: np.ndarray, omega: np.ndarray, dt: float,
              config: UkfConfig, vel_cov: np.ndarray | None = None) -> PoseState:
    """Unscented propagation of the pose under a constant screw over dt."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v_o = np.asarray(v_o, dtype=float).reshape(3)
    omega = np.asarray(omega, dtype=float).reshape(3)
    scale, wm, wc = _sigma_weights(6, config)
    deltas = _sigma_deltas(state.P, scale)
    A = np.eye(3) + skew(omega) * dt
    dq = UnitQuaternion.from_rotvec(omega * dt)
    positions = np.zeros((deltas.shape[0], 3))
    quats: list[UnitQuaternion] = []
    for s in range(deltas.shape[0]):
        t_s = state.position + deltas[s, :3]
        q_s = quat_multiply(state.orientation, UnitQuaternion.from_rotvec(deltas[s, 3:]))
        positions[s] = A @ t_s + v_o * dt
        quats.append(quat_multiply(dq, q_s))
    t_mean = wm @ positions
    q_mean = quat_weighted_mean(quats, wm, init=quats[0])
    inv = q_mean.conjugate()
    errs = np.zeros((deltas.shape[0], 6))
    errs[:, :3] = positions - t_mean
    for s, q_s in enumerate(quats):
        errs[s, 3:] = quat_multiply(inv, q_s).to_rotvec()
    errs -= wm @ errs
    P = errs.T @ (errs * wc[:, None])
    P[:3, :3] += config.q_t * dt
    P[3:, 3:] += config.q_q * dt
    if config.fold_velocity_cov and vel_cov is not None:
        # first-order sensitivity of the pose step to the velocity input:
        # d(t+) = (dv + dw x t) dt, d(theta) = dw dt.  The off-diagonal
        # blocks of the velocity covariance matter: for flow-derived
        # estimates the v/omega errors are anti-correlated along the
        # screw ambiguity, which largely cancels in d(t+).
        vel_cov = np.asarray(vel_cov, dtype=float).reshape(6, 6)
        B = np.zeros((6, 6))
        B[:3, :3] = np.eye(3)
        B[:3, 3:] = -skew(state.position)
        B[3:, 3:] = np.eye(3)
        P += (B @ vel_cov @ B.T) * (config.vel_cov_inflation * dt * dt)
    return PoseState(t_mean, q_mean, _symmetrize(P))


def correct(state: PoseState, obs: PoseObservation, config: UkfConfig) -> PoseState:
    """Unscented correction with the identity measurement on the error state."""
    q_meas = obs.orientation
    if (q_meas.w * state.orientation.w + q_meas.x * state.orientation.x
            + q_meas.y * state.orientation.y + q_meas.z * state.orientation.z) < 0.0:
        q_meas = UnitQuaternion(-q_meas.w, -q_meas.x, -q_meas.y, -q_meas.z)
    scale, wm, wc = _sigma_weights(6, config)
    deltas = _sigma_deltas(state.P, scale)
    inv = state.orientation.conjugate()
    ys = np.zeros((deltas.shape[0], 6))
    for s in range(deltas.shape[0]):
        q_s = quat_multiply(state.orientation, UnitQuaternion.from_rotvec(deltas[s, 3:]))
        ys[s, :3] = state.position + deltas[s, :3]
        ys[s, 3:] = quat_multiply(inv, q_s).to_rotvec()
    y_mean = wm @ ys
    dy = ys - y_mean
    dx = deltas - wm @ deltas
    R = np.zeros((6, 6))
    R[:3, :3] = config.r_t
    R[3:, 3:] = config.r_q
    S = dy.T @ (dy * wc[:, None]) + R
    C = dx.T @ (dy * wc[:, None])
    K = np.linalg.solve(S.T, C.T).T
    innov = np.zeros(6)
    innov[:3] = obs.position - y_mean[:3]
    innov[3:] = quat_multiply(inv, q_meas).to_rotvec() - y_mean[3:]
    delta_hat = K @ innov
    P = _symmetrize(state.P - K @ S @ K.T)
    return PoseState(
        state.position + delta_hat[:3],
        quat_multiply(state.orientation, UnitQuaternion.from_rotvec(delta_hat[3:])),
        P,
    )


def run_fusion(vel_trace: VelocityTrace, observations: list[PoseObservation],
               config: UkfConfig, init: PoseState) -> PoseTrace:
    """Propagate at every velocity sample; correct at pose observations.

    Each observation is applied at the nearest preceding propagation step
    (the greatest trace time not after its stamp; observations before the
    first sample are applied there).  With no observations the output is
    pure integration.  Emits one pose per velocity sample.
    """
    if len(vel_trace) == 0:
        raise ValueError("velocity trace is empty")
    obs_sorted = sorted(observations, key=lambda o: o.stamp)
    obs_step = [max(int(np.searchsorted(vel_trace.t, o.stamp, side="right")) - 1, 0)
                for o in obs_sorted]
    state = init
    n = len(vel_trace)
    t_out = vel_trace.t.copy()
    pos_out = np.zeros((n, 3))
    quat_out = np.zeros((n, 4))
    obs_ptr = 0
    for i in range(n):
        if i > 0:
            dt = float(vel_trace.t[i] - vel_trace.t[i - 1])
            vel_cov = vel_trace.cov[i - 1] if vel_trace.cov is not None else None
            state = propagate(state, vel_trace.linear[i - 1], vel_trace.angular[i - 1],
                              dt, config, vel_cov)
        while obs_ptr < len(obs_sorted) and obs_step[obs_ptr] == i:
            state = correct(state, obs_sorted[obs_ptr], config)
            obs_ptr += 1
        pos_out[i] = state.position
        quat_out[i] = state.orientation.as_wxyz()
    return PoseTrace(t_out, pos_out, quat_out)
