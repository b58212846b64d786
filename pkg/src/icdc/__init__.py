"""Cross-domain pixel correspondences from depth reprojection, with a
synthetic scene oracle, pose benchmark, scene blocks and loss kernels."""

__version__ = "0.1.0"

from . import errors
from .geometry import Camera, DepthMap, Homography, Pose, compose, inverse, pose_error, relative
from .correspondence import ConsistencyThresholds, CorrespondenceSet, icdc
from .essential import RansacConfig, estimate_relative_pose
from .benchmark import absolute_accuracy, auc, keyframe_eval, keyframe_train, summarize
from ._accel import backend_name

__all__ = [
    "Camera", "DepthMap", "Homography", "Pose", "compose", "inverse", "pose_error", "relative",
    "ConsistencyThresholds", "CorrespondenceSet", "icdc", "RansacConfig", "estimate_relative_pose",
    "absolute_accuracy", "auc", "keyframe_eval", "keyframe_train", "summarize", "backend_name",
    "errors",
]
