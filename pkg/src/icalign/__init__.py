"""Dense image alignment via robust inverse compositional least squares,
for 2D affine motion and 6-DoF rigid motion from RGB-D pairs."""

from .errors import IcAlignError
from .geometry import (
    RigidTransform,
    affine_compose,
    affine_inverse,
    compose_rigid,
    exp_se3,
    invert_rigid,
    log_se3,
)
from .metrics import PoseError, affine_l1, epe3d, relative_pose_error, success_ratio
from .robust import RobustLossSpec
from .solver import AlignmentResult, SolverConfig, align
from .warp import CameraIntrinsics, Frame

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult",
    "CameraIntrinsics",
    "Frame",
    "IcAlignError",
    "PoseError",
    "RigidTransform",
    "RobustLossSpec",
    "SolverConfig",
    "affine_compose",
    "affine_inverse",
    "affine_l1",
    "align",
    "compose_rigid",
    "epe3d",
    "exp_se3",
    "invert_rigid",
    "log_se3",
    "relative_pose_error",
    "success_ratio",
    "__version__",
]
