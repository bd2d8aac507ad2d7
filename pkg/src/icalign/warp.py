"""Geometric warps and their analytic Jacobians.

Rigid warps back-project a template pixel with its inverse depth through a
pinhole camera, transform the 3D point, and re-project: the warped pixel is
``project(K * T * depth(x) * K^-1 * x)``. The 2x6 Jacobian of the warped
pixel with respect to the twist, evaluated at the identity, uses the
inverse-depth parameterization: with normalized coordinates
``pu = (x - cx)/fx``, ``pv = (y - cy)/fy`` and inverse depth ``pd``,

    dW/dxi = [fx; fy] . [ -pu*pv   1+pu^2  -pv   pd   0   -pd*pu ]
                        [ -1-pv^2  pu*pv    pu   0    pd  -pd*pv ]

with twist columns ordered rotation-first, matching
:mod:`icalign.geometry`. Affine warps apply the 2x3 parameter matrix to
pixel coordinates directly; their Jacobian ``[[x,0,y,0,1,0],[0,x,0,y,0,1]]``
is exact since the warp is linear in the parameters.

Steepest-descent images combine template gradients with the warp Jacobian
into one row per pixel. In the inverse compositional scheme both are taken
in the template frame at the identity warp, so the rows are computed once
per pyramid level and reused across all inner iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, affine_matrix
from .imaging import bilinear_sample

# Points with warped depth at or below this are behind the camera.
MIN_WARPED_DEPTH = 1e-6

DEFAULT_OCCLUSION_SLACK = 0.05

_sdi_builds = 0


def sdi_build_count() -> int:
    """Number of steepest-descent-image constructions since the last reset."""
    return _sdi_builds


def reset_sdi_build_count() -> None:
    global _sdi_builds
    _sdi_builds = 0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def for_level(self, level: int) -> "CameraIntrinsics":
        """Intrinsics after ``level`` factor-2 downsamplings.

        Focal lengths halve per level; the principal point follows the
        pixel-center mapping coarse = (fine + 0.5)/2 - 0.5.
        """
        fx, fy, cx, cy = self.fx, self.fy, self.cx, self.cy
        for _ in range(level):
            fx *= 0.5
            fy *= 0.5
            cx = (cx + 0.5) / 2.0 - 0.5
            cy = (cy + 0.5) / 2.0 - 0.5
        return CameraIntrinsics(fx, fy, cx, cy)


@dataclass(frozen=True, eq=False)
class Frame:
    """An intensity image with optional inverse depth and intrinsics."""

    intensity: np.ndarray
    inverse_depth: np.ndarray | None = None
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self):
        img = np.asarray(self.intensity, dtype=np.float64)
        object.__setattr__(self, "intensity", img)
        if self.inverse_depth is not None:
            d = np.asarray(self.inverse_depth, dtype=np.float64)
            if d.shape != img.shape:
                raise ValueError("inverse depth shape must match intensity")
            object.__setattr__(self, "inverse_depth", d)

    @staticmethod
    def wrap(obj) -> "Frame":
        if isinstance(obj, Frame):
            return obj
        return Frame(intensity=obj)


def warp_rigid(x, y, inv_depth, intrinsics: CameraIntrinsics, transform: RigidTransform, bounds=None):
    """Warp pixels through depth reprojection.

    Parameters
    ----------
    x, y : pixel coordinates (scalars or arrays)
    inv_depth : inverse depth at those pixels, in 1/meters
    bounds : optional (height, width); when given, validity additionally
        requires the warped point to have a full bilinear neighborhood
        inside that image.

    Returns
    -------
    xw, yw : warped subpixel coordinates
    zw : warped depth in meters
    valid : False where the warped point lies behind the camera (or out of
        bounds when ``bounds`` is given)
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(inv_depth, dtype=np.float64)
    scalar = x.ndim == 0
    x, y, d = np.atleast_1d(x), np.atleast_1d(y), np.atleast_1d(d)

    has_depth = d > 0
    z = 1.0 / np.where(has_depth, d, 1.0)
    if np.array_equal(transform.rotation, np.eye(3)) and not transform.translation.any():
        # Exact fast path: the identity warp is the identity map.
        xw, yw, zw = x.copy(), y.copy(), z
        valid = has_depth
    else:
        px = (x - intrinsics.cx) / intrinsics.fx * z
        py = (y - intrinsics.cy) / intrinsics.fy * z
        pts = np.stack([px, py, z], axis=-1)
        out = transform.apply(pts)
        zw = out[..., 2]
        valid = has_depth & (zw > MIN_WARPED_DEPTH)
        zw_safe = np.where(valid, zw, 1.0)
        xw = intrinsics.fx * out[..., 0] / zw_safe + intrinsics.cx
        yw = intrinsics.fy * out[..., 1] / zw_safe + intrinsics.cy
    if bounds is not None:
        h, w = bounds
        x0 = np.floor(xw)
        y0 = np.floor(yw)
        valid &= (x0 >= 0) & (y0 >= 0) & (x0 <= w - 2) & (y0 <= h - 2)
    if scalar:
        return float(xw[0]), float(yw[0]), float(zw[0]), bool(valid[0])
    return xw, yw, zw, valid


def occlusion_mask(xw, yw, zw, target_inv_depth, slack: float = DEFAULT_OCCLUSION_SLACK):
    """Visibility flags for warped points tested against the target depth.

    A point is occluded when the target frame's surface at its landing
    position is shallower than the warped depth by more than ``slack``
    meters, or when the target has no valid depth there.

    Returns True for visible points.
    """
    if not slack > 0:
        raise ValueError("slack must be positive")
    d = np.asarray(target_inv_depth, dtype=np.float64)
    dt, ok = bilinear_sample(d, xw, yw, mask=d > 0)
    dt = np.atleast_1d(np.asarray(dt))
    ok = np.atleast_1d(np.asarray(ok))
    zt = np.where(ok, 1.0 / np.where(ok, dt, 1.0), 0.0)
    visible = ok & ~(zt < np.atleast_1d(zw) - slack)
    if np.ndim(xw) == 0:
        return bool(visible[0])
    return visible


def warp_jacobian_rigid(pu, pv, pd, intrinsics: CameraIntrinsics) -> np.ndarray:
    """2x6 derivative of the rigid warp at the identity.

    ``pu, pv`` are normalized image coordinates and ``pd`` the inverse
    depth; rows are scaled by (fx, fy). Broadcasts to shape (..., 2, 6).
    """
    pu = np.asarray(pu, dtype=np.float64)
    pv = np.asarray(pv, dtype=np.float64)
    pd = np.asarray(pd, dtype=np.float64)
    shape = np.broadcast_shapes(pu.shape, pv.shape, pd.shape)
    pu, pv, pd = (np.broadcast_to(a, shape) for a in (pu, pv, pd))
    zeros = np.zeros(shape)
    row1 = np.stack(
        [-pu * pv, 1.0 + pu * pu, -pv, pd, zeros, -pd * pu], axis=-1
    )
    row2 = np.stack(
        [-1.0 - pv * pv, pu * pv, pu, zeros, pd, -pd * pv], axis=-1
    )
    return np.stack([intrinsics.fx * row1, intrinsics.fy * row2], axis=-2)


def warp_affine(x, y, xi):
    """Apply the affine parameter matrix to pixel coordinates."""
    m = affine_matrix(xi)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xw = m[0, 0] * x + m[0, 1] * y + m[0, 2]
    yw = m[1, 0] * x + m[1, 1] * y + m[1, 2]
    return xw, yw


def warp_jacobian_affine(x, y) -> np.ndarray:
    """Exact 2x6 affine warp Jacobian; broadcasts to (..., 2, 6)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    shape = np.broadcast_shapes(x.shape, y.shape)
    x, y = np.broadcast_to(x, shape), np.broadcast_to(y, shape)
    zeros = np.zeros(shape)
    ones = np.ones(shape)
    row1 = np.stack([x, zeros, y, zeros, ones, zeros], axis=-1)
    row2 = np.stack([zeros, x, zeros, y, zeros, ones], axis=-1)
    return np.stack([row1, row2], axis=-2)


@dataclass
class SteepestDescentImage:
    """Per-pixel 1x6 rows of template gradient times warp Jacobian."""

    rows: np.ndarray  # (N, 6)
    pixel_indices: np.ndarray  # (N,) flat indices into the level grid
    shape: tuple  # (height, width) of the level


def steepest_descent_image(
    grads,
    family: str,
    inv_depth=None,
    intrinsics: CameraIntrinsics | None = None,
) -> SteepestDescentImage:
    """Assemble steepest-descent rows for a pyramid level.

    For the affine family one row per pixel; for the rigid family one row
    per pixel with valid (positive) inverse depth, using the template's
    own depth. Construction happens once per level; the module counter
    tracks invocations so reuse across inner iterations is testable.
    """
    global _sdi_builds
    gx, gy = grads
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    h, w = gx.shape
    _sdi_builds += 1

    if family == "affine":
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        xs, ys = xs.ravel(), ys.ravel()
        tx, ty = gx.ravel(), gy.ravel()
        rows = np.stack([tx * xs, ty * xs, tx * ys, ty * ys, tx, ty], axis=-1)
        return SteepestDescentImage(rows, np.arange(h * w), (h, w))

    if family == "rigid":
        if inv_depth is None or intrinsics is None:
            raise ValueError("rigid family requires inverse depth and intrinsics")
        d = np.asarray(inv_depth, dtype=np.float64)
        idx = np.flatnonzero(d.ravel() > 0)
        ys, xs = np.divmod(idx, w)
        pd = d.ravel()[idx]
        pu = (xs - intrinsics.cx) / intrinsics.fx
        pv = (ys - intrinsics.cy) / intrinsics.fy
        a = intrinsics.fx * gx.ravel()[idx]
        b = intrinsics.fy * gy.ravel()[idx]
        rows = np.stack(
            [
                -a * pu * pv - b * (1.0 + pv * pv),
                a * (1.0 + pu * pu) + b * pu * pv,
                -a * pv + b * pu,
                a * pd,
                b * pd,
                -pd * (a * pu + b * pv),
            ],
            axis=-1,
        )
        return SteepestDescentImage(rows, idx, (h, w))

    raise ValueError(f"unknown warp family: {family!r}")
