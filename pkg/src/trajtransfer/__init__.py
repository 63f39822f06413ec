"""Trajectory transfer from one demonstration via relative object pose estimation."""

from .se3 import Transform, change_delta_frame, compose, inverse, log_so3, exp_so3
from .transfer import DemoTrajectory, TransferResult, Twist, transfer_trajectory
from .scene import PointCloud, ScenePair, SymmetrySpec, build_object, default_camera, sample_scene_pair
from .estimators import PoseEstimate, run_estimator
from .metrics import PoseError, pose_error, symmetry_aware_error

__all__ = [
    "Transform", "compose", "inverse", "exp_so3", "log_so3", "change_delta_frame",
    "DemoTrajectory", "TransferResult", "Twist", "transfer_trajectory",
    "PointCloud", "ScenePair", "SymmetrySpec", "build_object", "default_camera", "sample_scene_pair",
    "PoseEstimate", "run_estimator", "PoseError", "pose_error", "symmetry_aware_error",
]
__version__ = "0.1.0"
