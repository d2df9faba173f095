"""6-DoF object velocity tracking from per-RoI event optical flow.

State is the camera-frame screw [v_o, omega]: v_o is the velocity of the
object point instantaneously at the camera origin, omega the object
angular velocity about that point; a point at camera position p moves
with p_dot = v_o + omega x p.

Prediction uses a decaying velocity model (mean scaled by alpha, alpha=1
being constant velocity); with no measurements the filter alone drives
the velocity to zero, matching the fact that an event camera produces no
data from a stationary scene.

Correction stacks one row per flow measurement.  The pinhole interaction
matrix J(u, v, d) maps the screw to pixel velocity.  Under the normal-flow
constraint only the component of the predicted flow along the measured
flow direction is compared against the measured magnitude (the component
parallel to a moving edge is unobservable); each row's noise is scaled by
a Laplacian weight centered on the median residual norm, which
de-emphasizes outliers.

Units: flows are px/s; predicted flow is J @ V, i.e. the measurement
interval multiplier is fixed to 1 so both sides stay in px/s.  Setting
``displacement_mode`` multiplies measured flows and model rows by the
batch interval to work in pixel displacements instead; the two modes are
algebraically equivalent up to the noise scale interpretation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, DepthMap
from .dataio import VelocityTrace
from .flow import FlowMeasurement

WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class VelocityState:
    """Screw-velocity mean (v_o, omega) with 6x6 covariance."""

    v_o: np.ndarray
    omega: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_o", np.asarray(self.v_o, dtype=float).reshape(3))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float).reshape(6, 6))
        if np.max(np.abs(self.P - self.P.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([self.v_o, self.omega])

    @classmethod
    def initial(cls, cov: float = 10.0) -> "VelocityState":
        return cls(np.zeros(3), np.zeros(3), cov * np.eye(6))


@dataclass
class VelocityFilterConfig:
    """Filter tuning; all values config-exposed.

    ``alpha`` in (0, 1] is the velocity decay per prediction; ``q_v`` and
    ``q_w`` the process noise for the linear/angular parts (scalar or
    3x3); ``r_f`` the scalar flow noise (px^2); ``laplace_b`` the
    weighting scale; ``flow_floor`` the minimum measured-flow magnitude
    for which the flow direction is trusted (px/s).
    """

    alpha: float = 0.5
    q_v: np.ndarray = field(default_factory=lambda: 0.1 ** 2 * np.eye(3))
    q_w: np.ndarray = field(default_factory=lambda: 0.5 ** 2 * np.eye(3))
    r_f: float = 4.0
    laplace_b: float = 1.0
    weight_floor: float = WEIGHT_FLOOR
    flow_floor: float = 1.0
    use_normal_flow: bool = True
    use_weighting: bool = True
    displacement_mode: bool = False
    init_cov: float = 10.0
    depth_search_radius: float = 25.0

    def __post_init__(self):
        for name in ("q_v", "q_w"):
            val = getattr(self, name)
            if np.ndim(val) == 0:
                val = float(val) * np.eye(3)
            setattr(self, name, np.asarray(val, dtype=float).reshape(3, 3))
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.laplace_b <= 0:
            raise ValueError("laplace_b must be > 0")


@dataclass
class FlowObservationBatch:
    """Flow measurements paired with depth at their anchors, over one interval."""

    measurements: list[FlowMeasurement]
    depths: np.ndarray
    delta_t: float

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=float).reshape(-1)
        if self.delta_t <= 0:
            raise ValueError("delta_t must be > 0")
        if len(self.measurements) != self.depths.shape[0]:
            raise ValueError("one depth per measurement required")


def interaction_matrix(u: float, v: float, d: float,
                       intrinsics: CameraIntrinsics) -> np.ndarray:
    """2x6 map from the object screw (v_o, omega) to pixel velocity (px/s).

    Derived from the pinhole projection differentiated along
    p_dot = v_o + omega x p at the point observed at pixel (u, v), depth d.
    """
    if d <= 0:
        raise ValueError("depth must be > 0")
    fx, fy = intrinsics.fx, intrinsics.fy
    ub = u - intrinsics.cx
    vb = v - intrinsics.cy
    return np.array([
        [fx / d, 0.0, -ub / d,
         -ub * vb / fy, (fx * fx + ub * ub) / fx, -vb * fx / fy],
        [0.0, fy / d, -vb / d,
         -(fy * fy + vb * vb) / fy, ub * vb / fx, ub * fy / fx],
    ])


def predict(state: VelocityState, config: VelocityFilterConfig) -> VelocityState:
    """Decaying-velocity prediction: mean <- alpha*mean, P <- alpha^2 P + Q."""
    a = config.alpha
    Q = np.zeros((6, 6))
    Q[:3, :3] = config.q_v
    Q[3:, 3:] = config.q_w
    return VelocityState(a * state.v_o, a * state.omega, a * a * state.P + Q)


def normal_flow_residual(measured: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Projection of the predicted flow onto the measured direction, minus
    the measured flow; components parallel to the edge are discarded."""
    measured = np.asarray(measured, dtype=float).reshape(2)
    predicted = np.asarray(predicted, dtype=float).reshape(2)
    norm = float(np.hypot(measured[0], measured[1]))
    if norm == 0.0:
        raise ValueError("normal-flow residual undefined for zero measured flow")
    unit = measured / norm
    proj = (predicted[0] * unit[0] + predicted[1] * unit[1])
    return proj * unit - measured

def laplace_weights(residuals: list[np.ndarray] | np.ndarray, b: float,
                    floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Laplacian weights around the median residual norm.

    With rk = |residual_k| and M = median{rk}:
    L_k = max(exp(-|rk - M| / b) / (2b), floor).
    """
    norms = np.array([float(np.linalg.norm(r)) for r in residuals])
    if norms.size == 0:
        raise ValueError("need at least one residual")
    M = float(np.median(norms))
    return np.maximum(np.exp(-np.abs(norms - M) / b) / (2.0 * b), floor)


def correct(state: VelocityState, batch: FlowObservationBatch,
            intrinsics: CameraIntrinsics,
            config: VelocityFilterConfig) -> VelocityState:
    """Kalman correction from one batch of flow measurements.

    Measurements with invalid depth, or (under the normal-flow constraint)
    with magnitude below ``flow_floor``, are dropped; if nothing survives
    the state is returned unchanged.
    """
    flows = np.array([m.flow for m in batch.measurements]).reshape(-1, 2)
    depths = batch.depths
    keep = np.isfinite(depths) & (depths > 0.0)
    if config.use_normal_flow and keep.any():
        mags = np.hypot(flows[:, 0], flows[:, 1])
        keep &= mags >= config.flow_floor
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return state
    mean = state.mean
    scale = batch.delta_t if config.displacement_mode else 1.0
    jacobians = [interaction_matrix(batch.measurements[k].u, batch.measurements[k].v,
                                    depths[k], intrinsics) for k in idx]
    measured = flows[idx]
    predicted = np.array([J @ mean for J in jacobians])
    if config.use_normal_flow:
        residuals = [normal_flow_residual(measured[k], predicted[k])
                     for k in range(idx.size)]
    else:
        residuals = [predicted[k] - measured[k] for k in range(idx.size)]
    if config.use_weighting:
        weights = laplace_weights(residuals, config.laplace_b, config.weight_floor)
    else:
        weights = np.ones(idx.size)
    rows_H, rows_z, rows_r = [], [], []
    for k in range(idx.size):
        J = jacobians[k]
        if config.use_normal_flow:
            norm = float(np.hypot(measured[k, 0], measured[k, 1]))
            unit = measured[k] / norm
            rows_H.append((unit @ J) * scale)
            rows_z.append(norm * scale)
            rows_r.append(config.r_f / weights[k])
        else:
            rows_H.append(J[0] * scale)
            rows_H.append(J[1] * scale)
            rows_z.extend(measured[k] * scale)
            rows_r.extend([config.r_f / weights[k]] * 2)
    H = np.array(rows_H).reshape(-1, 6)
    z = np.array(rows_z)
    Rd = np.array(rows_r)
    P = state.P
    S = H @ P @ H.T + np.diag(Rd)
    K = np.linalg.solve(S.T, (P @ H.T).T).T
    new_mean = mean + K @ (z - H @ mean)
    IKH = np.eye(6) - K @ H
    new_P = IKH @ P @ IKH.T + (K * Rd) @ K.T
    new_P = 0.5 * (new_P + new_P.T)
    return VelocityState(new_mean[:3], new_mean[3:], new_P)


def attach_depth(measurements: list[FlowMeasurement], depth_map: DepthMap | None,
                 delta_t: float, search_radius: float) -> FlowObservationBatch:
    """Pair each measurement with depth near its anchor pixel.

    Uses the depth at the anchor when valid, else the nearest valid depth
    within ``search_radius`` px (the sparse desk-scale depth maps do not
    cover every anchor exactly); measurements without depth get NaN and
    are dropped by the correction step.
    """
    depths = np.full(len(measurements), np.nan)
    if depth_map is not None:
        for k, m in enumerate(measurements):
            d = depth_map.at(m.u, m.v)
            if not np.isfinite(d):
                d = depth_map.nearest_valid(m.u, m.v, search_radius)
            depths[k] = d
    return FlowObservationBatch(measurements, depths, delta_t)


class VelocityTracker:
    """Sequential driver: one predict + (at most) one correct per flow batch."""

    def __init__(self, intrinsics: CameraIntrinsics,
                 config: VelocityFilterConfig | None = None):
        self.intrinsics = intrinsics
        self.config = config or VelocityFilterConfig()
        self.state = VelocityState.initial(self.config.init_cov)
        self._times: list[float] = []
        self._means: list[np.ndarray] = []
        self._covs: list[np.ndarray] = []

    def step(self, stamp: float, measurements: list[FlowMeasurement],
             depth_map: DepthMap | None, delta_t: float) -> VelocityState:
        self.state = predict(self.state, self.config)
        if measurements:
            batch = attach_depth(measurements, depth_map, delta_t,
                                 self.config.depth_search_radius)
            self.state = correct(self.state, batch, self.intrinsics, self.config)
        self._times.append(stamp)
        self._means.append(self.state.mean)
        self._covs.append(self.state.P.copy())
        return self.state

    def trace(self) -> VelocityTrace:
        means = np.array(self._means).reshape(-1, 6)
        return VelocityTrace(np.array(self._times), means[:, :3], means[:, 3:],
                             cov=np.array(self._covs).reshape(-1, 6, 6))
