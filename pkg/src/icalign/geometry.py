"""Rigid-body and planar affine warp algebra.

Twist coordinates are 6-vectors ordered ``(wx, wy, wz, vx, vy, vz)``:
rotation first, translation second. This ordering is fixed repo-wide and
matches the column order of the warp Jacobians in :mod:`icalign.warp`.

Affine warp parameters are 6-vectors ``(a1..a6)`` acting on pixel
coordinates through the 2x3 matrix ``[[1+a1, a3, a5], [a2, 1+a4, a6]]``.
Composition and inversion are closed-form polynomial expressions in the
parameters, equivalent to products of the homogeneous 3x3 matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAffineError, NearCutLocusWarning

# Below this rotation angle the closed forms switch to 2nd-order series to
# avoid cancellation in sin(t)/t-style coefficients.
SMALL_ANGLE = 1e-8

_ORTHONORMALITY_TOL = 1e-9


def skew(w: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix of a 3-vector."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation matrix plus translation vector, acting as ``p -> R p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform entries must be finite")
        err = np.linalg.norm(R.T @ R - np.eye(3))
        if err > _ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:.3g})")
        if abs(np.linalg.det(R) - 1.0) > _ORTHONORMALITY_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 homogeneous matrix, got {m.shape}")
        return RigidTransform(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


def exp_se3(xi: np.ndarray) -> RigidTransform:
    """Exponential map from twist coordinates to a rigid transform.

    Uses the Rodrigues closed form; for rotation magnitude below
    ``SMALL_ANGLE`` both the rotation and the translation coupling matrix
    fall back to their 2nd-order series.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    w, v = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    W = skew(w)
    W2 = W @ W
    eye = np.eye(3)
    if theta < SMALL_ANGLE:
        R = eye + W + 0.5 * W2
        V = eye + 0.5 * W + W2 / 6.0
    else:
        s = np.sin(theta)
        t2 = theta * theta
        a = s / theta
        # 2 sin^2(t/2) / t^2 avoids the (1 - cos t) cancellation near the
        # branch switch.
        b = 2.0 * np.sin(theta / 2.0) ** 2 / t2
        c = (theta - s) / (t2 * theta)
        R = eye + a * W + b * W2
        V = eye + b * W + c * W2
    return RigidTransform(R, V @ v)


def log_se3(t: RigidTransform) -> np.ndarray:
    """Principal logarithm of a rigid transform, inverse of :func:`exp_se3`.

    The rotation angle lies in [0, pi]. Within 1e-9 of pi the axis sign
    is poorly conditioned; a :class:`NearCutLocusWarning` is emitted and
    the returned twist has reduced precision.
    """
    R = t.rotation
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    skew_vec = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(skew_vec)
    theta = np.arctan2(s, c)

    if np.pi - theta < 1e-9:
        warnings.warn(
            "rotation angle within 1e-9 of pi; twist axis has reduced precision",
            NearCutLocusWarning,
            stacklevel=2,
        )
    if theta < SMALL_ANGLE:
        w = skew_vec  # theta/sin(theta) -> 1, higher terms below float precision
    elif theta < np.pi - 1e-6:
        w = skew_vec * (theta / s)
    else:
        # Near pi the skew part vanishes; recover the axis from the
        # symmetric part R ~ 2 u u^T - I and take signs from skew_vec.
        uut = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(uut), 0.0, None))
        k = int(np.argmax(axis))
        signs = np.ones(3)
        for i in range(3):
            if i != k:
                signs[i] = np.sign(uut[k, i]) or 1.0
        axis = axis * signs
        axis /= np.linalg.norm(axis)
        if s > 0 and np.dot(axis, skew_vec) < 0:
            axis = -axis
        w = theta * axis

    W = skew(w)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        v_inv = np.eye(3) - 0.5 * W + W2 / 12.0
    else:
        a = np.sin(theta) / theta
        b = 2.0 * np.sin(theta / 2.0) ** 2 / (theta * theta)
        v_inv = np.eye(3) - 0.5 * W + ((1.0 - a / (2.0 * b)) / (theta * theta)) * W2
    return np.concatenate([w, v_inv @ t.translation])


def compose_rigid(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Matrix composition: ``compose(a, b)`` acts as ``a`` after ``b``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert_rigid(t: RigidTransform) -> RigidTransform:
    """Inverse transform: rotation R^T, translation -R^T t."""
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle in radians of an orthonormal matrix, in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    c = (np.trace(R) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# Planar affine family
# ---------------------------------------------------------------------------

AFFINE_IDENTITY = np.zeros(6)
AFFINE_IDENTITY.flags.writeable = False


def affine_matrix(xi: np.ndarray) -> np.ndarray:
    """2x3 warp matrix [[1+a1, a3, a5], [a2, 1+a4, a6]] of the parameters."""
    a1, a2, a3, a4, a5, a6 = np.asarray(xi, dtype=np.float64).reshape(6)
    return np.array([[1.0 + a1, a3, a5], [a2, 1.0 + a4, a6]])


def affine_homogeneous(xi: np.ndarray) -> np.ndarray:
    """3x3 homogeneous form of the affine warp."""
    m = np.eye(3)
    m[:2, :] = affine_matrix(xi)
    return m


def affine_compose(xi: np.ndarray, dxi: np.ndarray) -> np.ndarray:
    """Parameters of the composed warp, outer warp ``xi`` after ``dxi``.

    Closed-form polynomials in the parameters; identical to multiplying
    the homogeneous matrices ``M(xi) @ M(dxi)``.
    """
    a1, a2, a3, a4, a5, a6 = np.asarray(xi, dtype=np.float64).reshape(6)
    b1, b2, b3, b4, b5, b6 = np.asarray(dxi, dtype=np.float64).reshape(6)
    return np.array(
        [
            a1 + b1 + a1 * b1 + a3 * b2,
            a2 + b2 + a2 * b1 + a4 * b2,
            a3 + b3 + a1 * b3 + a3 * b4,
            a4 + b4 + a2 * b3 + a4 * b4,
            a5 + b5 + a1 * b5 + a3 * b6,
            a6 + b6 + a2 * b5 + a4 * b6,
        ]
    )


def affine_inverse(xi: np.ndarray) -> np.ndarray:
    """Parameters of the inverse warp.

    Raises
    ------
    DegenerateAffineError
        If the linear part's determinant has magnitude below 1e-12.
    """
    a1, a2, a3, a4, a5, a6 = np.asarray(xi, dtype=np.float64).reshape(6)
    det = (1.0 + a1) * (1.0 + a4) - a2 * a3
    if abs(det) < 1e-12:
        raise DegenerateAffineError(f"affine linear part is singular (det = {det:.3g})")
    return (
        np.array(
            [
                -a1 - a1 * a4 + a2 * a3,
                -a2,
                -a3,
                -a4 - a1 * a4 + a2 * a3,
                -a5 - a4 * a5 + a3 * a6,
                -a6 - a1 * a6 + a2 * a5,
            ]
        )
        / det
    )
