"""Evaluation metrics: 3D end-point error, relative pose error, success
ratios, and affine parameter error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, compose_rigid, invert_rigid, rotation_angle


@dataclass(frozen=True)
class PoseError:
    rotation_deg: float
    translation_cm: float


def epe3d(points, t_est: RigidTransform, t_gt: RigidTransform) -> float:
    """Mean 3D end-point error in centimeters.

    Averages ``|T_gt p - T_est p|`` over the given points (meters in,
    centimeters out).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ValueError("point set must be nonempty")
    points = points.reshape(-1, 3)
    diff = t_gt.apply(points) - t_est.apply(points)
    return float(np.linalg.norm(diff, axis=1).mean() * 100.0)


def relative_pose_error(t_est: RigidTransform, t_gt: RigidTransform) -> PoseError:
    """Axis-angle rotation (degrees) and translation norm (cm) of the
    error transform ``T_gt^-1 T_est``."""
    err = compose_rigid(invert_rigid(t_gt), t_est)
    rot = np.rad2deg(rotation_angle(err.rotation))
    trans = float(np.linalg.norm(err.translation) * 100.0)
    return PoseError(rotation_deg=float(rot), translation_cm=trans)


def success_ratio(errors, rot_thresh_deg: float = 5.0, trans_thresh_cm: float = 5.0) -> float:
    """Fraction of pose errors with BOTH components strictly below the
    thresholds."""
    if not rot_thresh_deg > 0 or not trans_thresh_cm > 0:
        raise ValueError("thresholds must be positive")
    errors = list(errors)
    if not errors:
        raise ValueError("error list must be nonempty")
    hits = sum(
        1
        for e in errors
        if e.rotation_deg < rot_thresh_deg and e.translation_cm < trans_thresh_cm
    )
    return hits / len(errors)


def affine_l1(est, gt) -> float:
    """Sum of absolute differences of the six affine parameters."""
    est = np.asarray(est, dtype=np.float64).reshape(6)
    gt = np.asarray(gt, dtype=np.float64).reshape(6)
    return float(np.abs(est - gt).sum())
