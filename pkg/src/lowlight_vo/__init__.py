"""Low-light visual-inertial odometry toolkit.

Guided-attention pose regressor (forward pass + attention gradients), IMU
pre-integration with GNSS correction, Levenberg-Marquardt pose-graph
refinement, trajectory metrics, and a synthetic scenario generator.
"""
from ._kernels import BACKEND
from .geometry import (
    Pose,
    compose,
    inverse,
    pose_from_twist,
    relative_pose,
    so3_exp,
    so3_log,
    twist_from_pose,
)
from .imu import (
    GnssFix,
    ImuSample,
    PreintegratedMotion,
    apply_gnss_correction,
    chain_to_world,
    preintegrate,
)
from .metrics import ate, rpe, segment_errors, umeyama_align
from .pgo import LmConfig, PoseGraph, SolveReport, build_graph, graph_cost, lm_solve
from .trajectory import Trajectory

__version__ = "0.1.0"
