"""Per-RoI optical flow from an event stream by spatio-temporal triplet matching.

Three events e_i, e_j, e_k form a triplet when their pixel hops are the
same integer offset, their hop times agree within a tolerance ``xi``, and
all three fall inside a short temporal window.  Each triplet votes a
candidate flow (x_k - x_i)/(t_k - t_i) for its oldest event.  The image
plane is split into square RoI cells; per batch interval, each cell with
candidates emits the single candidate minimizing the summed per-event
nearest-candidate distance

    cost(F') = sum_i min_{F_c in M_i} |F' - F_c|

over the events i of the cell (Euclidean norm, M_i the candidate set of
event i).  Candidates are restricted to the discrete set collected in the
cell, so the aggregation is an O(|M| * n) exact argmin, not a continuous
optimization.

Tolerance discipline: the matching constraint is interpreted as identical
integer pixel offsets (x_j - x_i) == (x_k - x_j) with hop-time slack
|(t_k - t_j) - (t_j - t_i)| <= xi; the slack parameter only enters the
temporal axis.  This keeps the per-triplet check O(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import flow_kernels
from .camera import CameraIntrinsics
from .dataio import DataFormatError, EventStream

_INITIAL_CANDIDATE_CAP = 1 << 14


class MalformedStreamError(DataFormatError):
    """Raised when an event stream violates time ordering."""


@dataclass(frozen=True)
class TripletConstraintParams:
    """Search bounds for the triplet matcher.

    ``xi`` is the hop-time tolerance in seconds; ``spatial_radius`` bounds
    each hop's pixel offset (Chebyshev); ``temporal_window`` bounds the
    triplet's total age; ``buffer_depth`` is the per-pixel ring-buffer
    capacity (older events at a pixel are forgotten); ``same_polarity``
    optionally restricts triplets to events of equal polarity.
    """

    xi: float = 1e-3
    spatial_radius: int = 3
    temporal_window: float = 30e-3
    buffer_depth: int = 4
    same_polarity: bool = False

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("xi must be > 0")
        if self.spatial_radius < 1:
            raise ValueError("spatial_radius must be >= 1")
        if self.temporal_window <= 0:
            raise ValueError("temporal_window must be > 0")
        if self.buffer_depth < 1:
            raise ValueError("buffer_depth must be >= 1")


@dataclass(frozen=True)
class FlowMeasurement:
    """Aggregated flow of one RoI cell.

    ``u``/``v`` anchor the measurement at the support-weighted centroid of
    the contributing event pixels, ``t`` is the aggregation stamp, ``flow``
    is px/s, ``n_support`` counts the contributing triplet candidates.
    """

    u: int
    v: int
    t: float
    flow: np.ndarray
    n_support: int

    def __post_init__(self):
        object.__setattr__(self, "flow", np.asarray(self.flow, dtype=float).reshape(2))
        if not np.all(np.isfinite(self.flow)):
            raise ValueError("flow components must be finite")
        if self.n_support < 1:
            raise ValueError("n_support must be >= 1")


@dataclass
class TripletCandidates:
    """Column-oriented candidate flows, one row per matched triplet.

    ``anchor_*`` identify the triplet's oldest event (the flow's owner);
    ``discovered_t`` is the timestamp of the newest event, i.e. when the
    streaming engine learns about the candidate.
    """

    anchor_u: np.ndarray
    anchor_v: np.ndarray
    anchor_t: np.ndarray
    flow: np.ndarray
    discovered_t: np.ndarray

    def __len__(self) -> int:
        return self.anchor_u.shape[0]

    @classmethod
    def empty(cls) -> "TripletCandidates":
        z = np.zeros(0)
        return cls(z.astype(np.int64), z.astype(np.int64), z.copy(), np.zeros((0, 2)), z.copy())


@dataclass
class RoiGrid:
    """Accumulates candidate flows per RoI cell for one aggregation window."""

    cell_size: int
    cells: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cell_size < 2:
            raise ValueError("cell_size must be >= 2")

    def add_candidates(self, cand: TripletCandidates) -> None:
        if len(cand) == 0:
            return
        cy = cand.anchor_v // self.cell_size
        cx = cand.anchor_u // self.cell_size
        keys = np.stack([cy, cx], axis=1)
        order = np.lexsort((cx, cy))
        sorted_keys = keys[order]
        boundaries = np.nonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1))[0] + 1
        for chunk in np.split(order, boundaries):
            key = (int(cy[chunk[0]]), int(cx[chunk[0]]))
            rows = self.cells.setdefault(key, [])
            rows.append((
                cand.anchor_t[chunk], cand.anchor_u[chunk], cand.anchor_v[chunk],
                cand.flow[chunk],
            ))

    def clear(self) -> None:
        self.cells.clear()


def _aggregate_cell(t, u, v, flow, window_end: float) -> FlowMeasurement:
    # deterministic order: earliest anchor timestamp first, then pixel/flow
    order = np.lexsort((flow[:, 1], flow[:, 0], v, u, t))
    t, u, v, flow = t[order], u[order], v[order], flow[order]
    # group candidates by source event (t, u, v); groups are contiguous
    keys = np.stack([t, u.astype(float), v.astype(float)], axis=1)
    new_group = np.ones(len(t), dtype=bool)
    new_group[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    starts = np.nonzero(new_group)[0]
    # cost matrix: rows = candidate F', cols = candidates grouped by event
    diff = flow[:, None, :] - flow[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    per_event_min = np.minimum.reduceat(dist, starts, axis=1)
    cost = per_event_min.sum(axis=1)
    best = int(np.argmin(cost))  # first minimum = earliest-timestamp tie-break
    anchor_u = int(np.floor(np.mean(u) + 0.5))
    anchor_v = int(np.floor(np.mean(v) + 0.5))
    return FlowMeasurement(anchor_u, anchor_v, float(window_end),
                           flow[best].copy(), int(len(t)))


def aggregate_roi_flow(grid: RoiGrid, window_end: float) -> list[FlowMeasurement]:
    """Aggregate every non-empty cell; output ordered by (cell row, cell col)."""
    out = []
    for key in sorted(grid.cells.keys()):
        chunks = grid.cells[key]
        t = np.concatenate([c[0] for c in chunks])
        u = np.concatenate([c[1] for c in chunks])
        v = np.concatenate([c[2] for c in chunks])
        flow = np.concatenate([c[3] for c in chunks])
        out.append(_aggregate_cell(t, u, v, flow, window_end))
    return out


class FlowEngine:
    """Streaming triplet search + per-batch RoI aggregation.

    Single-threaded and stateful per stream; feed events in time order.
    """

    def __init__(self, intrinsics: CameraIntrinsics,
                 params: TripletConstraintParams | None = None,
                 roi_cell_size: int = 16,
                 batch_interval: float = 10e-3):
        if batch_interval <= 0:
            raise ValueError("batch_interval must be > 0")
        self.intrinsics = intrinsics
        self.params = params or TripletConstraintParams()
        self.roi_cell_size = roi_cell_size
        self.batch_interval = batch_interval
        n_pix = intrinsics.width * intrinsics.height
        depth = self.params.buffer_depth
        self._buf_t = np.full((n_pix, depth), -1.0)
        self._buf_p = np.zeros((n_pix, depth), dtype=np.int8)
        self._buf_n = np.zeros(n_pix, dtype=np.int64)
        self._last_t = -np.inf
        self._cap = _INITIAL_CANDIDATE_CAP

    def _search(self, stream: EventStream) -> TripletCandidates:
        """Run the kernel over a chunk of events, growing output buffers as needed."""
        if len(stream) == 0:
            return TripletCandidates.empty()
        if stream.t[0] < self._last_t or np.any(np.diff(stream.t) < 0):
            raise MalformedStreamError("event stream is not time-ordered")
        self._last_t = float(stream.t[-1])
        p = self.params
        pieces = []
        start = 0
        n = len(stream)
        while start < n:
            out_u = np.zeros(self._cap, dtype=np.int64)
            out_v = np.zeros(self._cap, dtype=np.int64)
            out_t = np.zeros(self._cap)
            out_fx = np.zeros(self._cap)
            out_fy = np.zeros(self._cap)
            out_disc = np.zeros(self._cap)
            nxt, cnt = flow_kernels.search_events(
                stream.u, stream.v, stream.t, stream.polarity, start,
                self._buf_t, self._buf_p, self._buf_n, p.buffer_depth,
                self.intrinsics.width, self.intrinsics.height,
                p.spatial_radius, p.xi, p.temporal_window, p.same_polarity,
                out_u, out_v, out_t, out_fx, out_fy, out_disc)
            if cnt:
                pieces.append((out_u[:cnt], out_v[:cnt], out_t[:cnt],
                               out_fx[:cnt], out_fy[:cnt], out_disc[:cnt]))
            if nxt == start:  # no progress: buffer too small for one event
                self._cap *= 2
            start = nxt
        if not pieces:
            return TripletCandidates.empty()
        return TripletCandidates(
            np.concatenate([c[0] for c in pieces]),
            np.concatenate([c[1] for c in pieces]),
            np.concatenate([c[2] for c in pieces]),
            np.stack([np.concatenate([c[3] for c in pieces]),
                      np.concatenate([c[4] for c in pieces])], axis=1),
            np.concatenate([c[5] for c in pieces]),
        )

    def run(self, stream: EventStream) -> list[FlowMeasurement]:
        """Process a full stream; one aggregation per RoI per batch interval.

        Batch b covers discovery times in [b*T, (b+1)*T) and is stamped at
        its window end (b+1)*T.  Deterministic: identical input yields a
        bit-identical measurement list.
        """
        stream.validate()
        if len(stream) == 0:
            return []
        T = self.batch_interval
        n_batches = int(np.floor(stream.t[-1] / T)) + 1
        bounds = np.searchsorted(stream.t, np.arange(n_batches + 1) * T, side="left")
        grid = RoiGrid(self.roi_cell_size)
        out: list[FlowMeasurement] = []
        for b in range(n_batches):
            lo, hi = bounds[b], bounds[b + 1]
            if hi > lo:
                chunk = EventStream(stream.t[lo:hi], stream.u[lo:hi], stream.v[lo:hi],
                                    stream.polarity[lo:hi], stream.width, stream.height)
                grid.add_candidates(self._search(chunk))
            if grid.cells:
                out.extend(aggregate_roi_flow(grid, (b + 1) * T))
                grid.clear()
        return out


def search_triplets(stream: EventStream,
                    params: TripletConstraintParams,
                    intrinsics: CameraIntrinsics) -> TripletCandidates:
    """One-shot triplet search over a whole time-ordered stream."""
    engine = FlowEngine(intrinsics, params)
    stream.validate()
    return engine._search(stream)


def run_flow_engine(stream: EventStream,
                    params: TripletConstraintParams,
                    intrinsics: CameraIntrinsics,
                    roi_cell_size: int = 16,
                    batch_interval: float = 10e-3) -> list[FlowMeasurement]:
    """Convenience wrapper: fresh engine, full stream, time-ordered output."""
    return FlowEngine(intrinsics, params, roi_cell_size, batch_interval).run(stream)
