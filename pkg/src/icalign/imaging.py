"""Image containers, bilinear sampling, Sobel gradients, pooled pyramids.

Images are 2-D float64 arrays indexed ``[row, col]``, i.e. ``[y, x]``, with
pixel centers at integer coordinates. Photometric channels are normalized
to [0, 1] on load. Inverse-depth channels store ``1/depth`` with 0 marking
an invalid pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmallError, PyramidDepthError

MIN_LEVEL_SIZE = 8


def as_image(data) -> np.ndarray:
    """Validate and convert input to a finite 2-D float64 array."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def bilinear_sample(img, x, y, mask=None):
    """Sample ``img`` at subpixel positions with validity tracking.

    A sample is valid iff all four neighboring pixels lie inside the image
    and, when ``mask`` is given (e.g. a depth-validity mask), all four
    carry valid data. Invalid samples get value 0.

    Parameters
    ----------
    img : 2-D array
    x, y : scalars or arrays of sample coordinates (pixel centers at
        integer positions)
    mask : optional boolean array of per-pixel validity, same shape as img

    Returns
    -------
    values, valid : arrays broadcast to the shape of ``x`` (scalars in,
        scalars out)
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    scalar = x.ndim == 0 and y.ndim == 0
    x, y = np.atleast_1d(x), np.atleast_1d(y)

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    valid = (x0 >= 0) & (y0 >= 0) & (x0 <= w - 2) & (y0 <= h - 2)

    x0c = np.minimum(np.maximum(x0, 0), w - 2)
    y0c = np.minimum(np.maximum(y0, 0), h - 2)
    fx = x - x0c
    fy = y - y0c

    flat = img.ravel()
    idx = y0c * w + x0c
    v00 = flat[idx]
    v01 = flat[idx + 1]
    v10 = flat[idx + w]
    v11 = flat[idx + w + 1]
    top = v00 + fx * (v01 - v00)
    bottom = v10 + fx * (v11 - v10)
    values = top + fy * (bottom - top)

    if mask is not None:
        mflat = np.asarray(mask, dtype=bool).ravel()
        valid &= mflat[idx] & mflat[idx + 1] & mflat[idx + w] & mflat[idx + w + 1]

    values = np.where(valid, values, 0.0)
    if scalar:
        return float(values[0]), bool(valid[0])
    return values, valid


def sobel_gradients(img):
    """Per-pixel x/y gradients via the 3x3 Sobel operator.

    Kernels are scaled by 1/8 so the response to a unit linear ramp is
    exactly 1 in the interior; borders use replicate padding.
    """
    img = as_image(img)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ImageTooSmallError(f"image too small for Sobel gradients: {w}x{h}")
    p = np.pad(img, 1, mode="edge")
    gx = (
        (p[:-2, 2:] - p[:-2, :-2])
        + 2.0 * (p[1:-1, 2:] - p[1:-1, :-2])
        + (p[2:, 2:] - p[2:, :-2])
    ) / 8.0
    gy = (
        (p[2:, :-2] - p[:-2, :-2])
        + 2.0 * (p[2:, 1:-1] - p[:-2, 1:-1])
        + (p[2:, 2:] - p[:-2, 2:])
    ) / 8.0
    return gx, gy


def average_pool2(img) -> np.ndarray:
    """Non-overlapping 2x2 mean pooling; odd trailing rows/columns dropped."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    v = img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    return v.mean(axis=(1, 3))


def pool_inverse_depth(inv_depth) -> np.ndarray:
    """2x2 pooling of an inverse-depth channel averaging valid entries only.

    A block with zero valid entries is invalid (0) at the coarse level.
    """
    d = np.asarray(inv_depth, dtype=np.float64)
    h, w = d.shape
    h2, w2 = h // 2, w // 2
    v = d[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    ok = v > 0
    count = ok.sum(axis=(1, 3))
    total = np.where(ok, v, 0.0).sum(axis=(1, 3))
    with np.errstate(invalid="ignore"):
        out = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    return out


@dataclass
class ImagePyramid:
    """Factor-2 average-pooled levels, finest first, with per-level gradients."""

    images: list
    grads: list  # (gx, gy) per level

    @property
    def levels(self) -> int:
        return len(self.images)


def build_pyramid(img, levels: int) -> ImagePyramid:
    """Build an intensity pyramid with Sobel gradients at every level.

    Raises
    ------
    PyramidDepthError
        If the coarsest level would fall below 8x8.
    """
    img = as_image(img)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    images = [img]
    for _ in range(levels - 1):
        images.append(average_pool2(images[-1]))
    h, w = images[-1].shape
    if h < MIN_LEVEL_SIZE or w < MIN_LEVEL_SIZE:
        raise PyramidDepthError(
            f"pyramid too deep: coarsest level {w}x{h} is below "
            f"{MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}"
        )
    grads = [sobel_gradients(level) for level in images]
    return ImagePyramid(images=images, grads=grads)


def build_inverse_depth_pyramid(inv_depth, levels: int) -> list:
    """Valid-entry-mean pyramid of an inverse-depth channel."""
    d = np.asarray(inv_depth, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"expected a 2-D depth image, got shape {d.shape}")
    out = [d]
    for _ in range(levels - 1):
        out.append(pool_inverse_depth(out[-1]))
    return out
