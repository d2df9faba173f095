"""Event-camera optical flow, 6-DoF velocity tracking, and pose fusion.

The stack has four stages:

1. ``flow``     - per-RoI optical flow from the raw event stream by
                  spatio-temporal triplet matching and robust aggregation.
2. ``velocity`` - Kalman tracking of the object's 6-DoF screw velocity
                  from flow measurements through the pinhole interaction
                  matrix, with a normal-flow constraint and Laplacian
                  measurement weighting.
3. ``pose``     - quaternion error-state UKF fusing the tracked velocity
                  with low-rate noisy absolute pose observations.
4. ``sim`` / ``harness`` - a desk-scale synthetic scene generator and the
                  end-to-end evaluation pipeline, so every stage is
                  testable without hardware.
"""

from .camera import CameraIntrinsics, DepthMap, Event
from .dataio import EventStream, PoseTrace, VelocityTrace
from .flow import (FlowEngine, FlowMeasurement, RoiGrid, TripletConstraintParams,
                   aggregate_roi_flow, run_flow_engine, search_triplets)
from .geometry import UnitQuaternion, quat_multiply, rotation_vector_error, skew
from .pose import PoseObservation, PoseState, UkfConfig, run_fusion
from .velocity import (FlowObservationBatch, VelocityFilterConfig, VelocityState,
                       VelocityTracker, interaction_matrix, laplace_weights,
                       normal_flow_residual)

__all__ = [
    "CameraIntrinsics", "DepthMap", "Event", "EventStream", "PoseTrace",
    "VelocityTrace", "FlowEngine", "FlowMeasurement", "RoiGrid",
    "TripletConstraintParams", "aggregate_roi_flow", "run_flow_engine",
    "search_triplets", "UnitQuaternion", "quat_multiply",
    "rotation_vector_error", "skew", "PoseObservation", "PoseState",
    "UkfConfig", "run_fusion", "FlowObservationBatch", "VelocityFilterConfig",
    "VelocityState", "VelocityTracker", "interaction_matrix",
    "laplace_weights", "normal_flow_residual",
]

__version__ = "0.1.0"
