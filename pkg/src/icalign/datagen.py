"""Deterministic synthetic ground-truth generators for both warp families.

Affine pairs come from a single source image: the emitted image is an
exact integer crop of the source and the template is synthesized by
bilinearly sampling the source along the ground-truth warp. Sampling the
image crop at the warped template coordinates therefore reproduces the
template to float rounding wherever the samples stay inside the crop, so
the emitted parameters are the exact minimizer of the photometric
objective.

Rigid pairs are analytic renders of textured planes: depth comes from
exact ray-plane intersection and intensity from a band-limited procedural
texture anchored to the surface, evaluated independently in both camera
views. Every generator validates its own ground truth before returning
and fails loudly when the self-consistency oracle does not hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, InsufficientMarginError, MotionTooLargeError
from .geometry import RigidTransform, exp_se3
from .imaging import as_image, bilinear_sample
from .warp import CameraIntrinsics, Frame, occlusion_mask, warp_affine, warp_rigid

DEFAULT_AFFINE_BOUNDS = (0.05, 0.05, 0.05, 0.05, 8.0, 8.0)


class BandLimitedTexture:
    """Sum of seeded smooth cosine waves, valued in [0, 1].

    Amplitudes grow with the period so coarse structure dominates, which
    keeps coarse pyramid levels informative for alignment.
    """

    def __init__(self, rng, components=8, period_range=(24.0, 240.0), total_amplitude=0.45):
        pmin, pmax = period_range
        periods = np.exp(rng.uniform(math.log(pmin), math.log(pmax), components))
        angles = rng.uniform(0.0, 2.0 * np.pi, components)
        self.phases = rng.uniform(0.0, 2.0 * np.pi, components)
        amps = np.sqrt(periods)
        self.amps = amps * (total_amplitude / amps.sum())
        k = 2.0 * np.pi / periods
        self.kx = k * np.cos(angles)
        self.ky = k * np.sin(angles)

    def __call__(self, u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        out = np.full(np.broadcast_shapes(u.shape, v.shape), 0.5)
        for kx, ky, amp, ph in zip(self.kx, self.ky, self.amps, self.phases):
            out = out + amp * np.cos(kx * u + ky * v + ph)
        return out


# ---------------------------------------------------------------------------
# Affine pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineGenSpec:
    """Seeded draw of an affine pair: crop size and per-parameter caps."""

    seed: int = 0
    crop: tuple = (320, 240)  # (width, height)
    bounds: tuple = DEFAULT_AFFINE_BOUNDS
    noise_sigma: float = 0.0

    def __post_init__(self):
        if len(self.bounds) != 6 or any(b < 0 for b in self.bounds):
            raise ValueError("bounds must be six nonnegative magnitude caps")
        w, h = self.crop
        if w < 8 or h < 8:
            raise ValueError("crop must be at least 8x8")


def synthesize_affine_pair(source, xi, crop):
    """Build (template, image) for exact warp parameters ``xi``.

    The warp maps template crop coordinates onto image crop coordinates:
    the image is the central integer crop of the source and the template
    is the source resampled at the warped positions.
    """
    source = as_image(source)
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    w, h = crop
    src_h, src_w = source.shape
    if src_w < w or src_h < h:
        raise InsufficientMarginError(
            f"source {src_w}x{src_h} smaller than crop {w}x{h}"
        )
    ox = (src_w - w) // 2
    oy = (src_h - h) // 2
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xw, yw = warp_affine(xs.ravel(), ys.ravel(), xi)
    tvals, ok = bilinear_sample(source, xw + ox, yw + oy)
    if not ok.all():
        raise InsufficientMarginError(
            "warp requires samples outside the source; enlarge the source margin"
        )
    template = tvals.reshape(h, w)
    image = source[oy : oy + h, ox : ox + w].copy()

    # Ground-truth validation: the emitted parameters must reproduce the
    # template from the image on every in-crop sample.
    vals, inb = bilinear_sample(image, xw, yw)
    if inb.any():
        err = float(np.mean(np.abs(vals[inb] - template.ravel()[inb])))
        if err > 1e-6:
            raise GenerationError(
                f"affine pair failed self-consistency: mean abs error {err:.3e}"
            )
    return template, image, xi


def required_margin(crop, bounds):
    """Per-axis source margin (x, y) needed to cover the warp bounds."""
    w, h = crop
    b = np.asarray(bounds, dtype=np.float64)
    mx = b[0] * (w - 1) + b[2] * (h - 1) + b[4]
    my = b[1] * (w - 1) + b[3] * (h - 1) + b[5]
    return int(math.ceil(mx)) + 2, int(math.ceil(my)) + 2


def default_affine_source(spec: AffineGenSpec) -> np.ndarray:
    """Procedural source image sized for the crop plus warp margin."""
    w, h = spec.crop
    mx, my = required_margin(spec.crop, spec.bounds)
    rng = np.random.default_rng([spec.seed, 1])
    texture = BandLimitedTexture(
        rng, components=8, period_range=(24.0, 0.75 * min(w, h))
    )
    src_w, src_h = w + 2 * mx, h + 2 * my
    ys, xs = np.mgrid[0:src_h, 0:src_w].astype(np.float64)
    return texture(xs, ys)


def gen_affine_pair(source, spec: AffineGenSpec):
    """Draw warp parameters within the spec bounds and emit a pair.

    ``source`` may be None to use the procedural default source. Returns
    (template, image, xi_gt) with xi_gt in crop-local coordinates.
    """
    rng = np.random.default_rng(spec.seed)
    bounds = np.asarray(spec.bounds, dtype=np.float64)
    xi = rng.uniform(-bounds, bounds)
    if source is None:
        source = default_affine_source(spec)
    template, image, xi = synthesize_affine_pair(source, xi, spec.crop)
    if spec.noise_sigma > 0:
        template = np.clip(template + rng.normal(0, spec.noise_sigma, template.shape), 0, 1)
        image = np.clip(image + rng.normal(0, spec.noise_sigma, image.shape), 0, 1)
    return template, image, xi


# ---------------------------------------------------------------------------
# RGB-D pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TexturedPlane:
    """Single plane through (0, 0, depth) with the given unit-ish normal."""

    depth: float = 1.5
    normal: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not 0.1 < self.depth < 10.0:
            raise ValueError("plane depth must lie in (0.1, 10) meters")
        n = np.asarray(self.normal, dtype=np.float64)
        if n[2] <= 0:
            raise ValueError("plane normal must face the camera (nz > 0)")


@dataclass(frozen=True)
class TwoPlanes:
    """Fronto-parallel near half-plane over a far plane.

    The near plane exists where the surface point's x coordinate (in the
    template camera frame, meters) is at most ``split``.
    """

    near: float = 1.2
    far: float = 2.0
    split: float = 0.0

    def __post_init__(self):
        if not (0.1 < self.near < self.far < 10.0):
            raise ValueError("plane depths must satisfy 0.1 < near < far < 10 meters")


@dataclass(frozen=True)
class RgbdSceneSpec:
    seed: int = 0
    width: int = 160
    height: int = 120
    intrinsics: CameraIntrinsics | None = None  # None: centered, fx = 0.8125 * width
    scene: object = TexturedPlane()
    texture_components: int = 8
    texture_period_range: tuple | None = None  # meters; None: 20..120 px on the surface
    max_rotation_deg: float = 3.0
    max_translation: float = 0.03  # meters
    min_covisible: float = 0.7
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.intrinsics is None:
            f = 0.8125 * self.width
            object.__setattr__(
                self,
                "intrinsics",
                CameraIntrinsics(f, f, (self.width - 1) / 2.0, (self.height - 1) / 2.0),
            )
        if self.texture_period_range is None:
            # Tie surface periods to the pixel footprint so the bilinear
            # interpolation error of the rendered pair stays resolution
            # independent.
            if isinstance(self.scene, TwoPlanes):
                z_ref = self.scene.near
            else:
                z_ref = self.scene.depth
            footprint = z_ref / self.intrinsics.fx
            object.__setattr__(
                self, "texture_period_range", (20.0 * footprint, 120.0 * footprint)
            )


def _scene_planes(scene):
    """Planes as (normal, offset, occupancy) in the template camera frame;
    occupancy maps template-frame points to a boolean mask."""
    if isinstance(scene, TexturedPlane):
        n = np.asarray(scene.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        offset = n[2] * scene.depth  # plane passes through (0, 0, depth)
        return [(n, offset, None)]
    if isinstance(scene, TwoPlanes):
        nz = np.array([0.0, 0.0, 1.0])
        split = scene.split
        return [
            (nz, scene.near, lambda pts: pts[:, 0] <= split),
            (nz, scene.far, None),
        ]
    raise ValueError(f"unknown scene type: {type(scene).__name__}")


def render_rgbd_view(spec: RgbdSceneSpec, texture, pose: RigidTransform):
    """Analytic render of the scene from a camera at ``pose``.

    ``pose`` maps template-frame points into the view frame. Returns
    (intensity, depth) with exact ray-plane depth in meters.
    """
    k = spec.intrinsics
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    dirs = np.stack(
        [(xs.ravel() - k.cx) / k.fx, (ys.ravel() - k.cy) / k.fy, np.ones(xs.size)],
        axis=-1,
    )
    n_pix = dirs.shape[0]
    best_t = np.full(n_pix, np.inf)
    tex_u = np.zeros(n_pix)
    tex_v = np.zeros(n_pix)
    r_inv = pose.rotation.T
    for normal, offset, occupancy in _scene_planes(spec.scene):
        n_view = pose.rotation @ normal
        off_view = offset + n_view @ pose.translation
        denom = dirs @ n_view
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, off_view / denom, np.inf)
        pts_view = t[:, None] * dirs
        pts_tpl = (pts_view - pose.translation) @ r_inv.T
        hit = (t > 0) & np.isfinite(t)
        if occupancy is not None:
            hit &= occupancy(pts_tpl)
        better = hit & (t < best_t)
        best_t = np.where(better, t, best_t)
        tex_u = np.where(better, pts_tpl[:, 0], tex_u)
        tex_v = np.where(better, pts_tpl[:, 1], tex_v)
    if not np.all(np.isfinite(best_t)):
        raise GenerationError("a ray missed every scene surface")
    depth = best_t.reshape(spec.height, spec.width)
    if depth.min() <= 0.1 or depth.max() >= 10.0:
        raise GenerationError(
            f"rendered depth outside (0.1, 10) m: [{depth.min():.3g}, {depth.max():.3g}]"
        )
    intensity = texture(tex_u, tex_v).reshape(spec.height, spec.width)
    return intensity, depth


def draw_rigid_motion(rng, max_rotation_deg: float, max_translation: float) -> RigidTransform:
    """Uniform random motion within the rotation/translation magnitude caps."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.deg2rad(max_rotation_deg))
    tdir = rng.normal(size=3)
    tdir /= np.linalg.norm(tdir)
    tmag = rng.uniform(0.0, max_translation)
    return exp_se3(np.concatenate([axis * angle, tdir * tmag]))


def render_rgbd_pair(spec: RgbdSceneSpec, transform: RigidTransform, texture=None):
    """Render both frames for an exact relative motion.

    ``transform`` maps template-camera points into the image-camera frame.
    Validates the reprojection self-consistency oracle before returning.
    """
    if texture is None:
        rng = np.random.default_rng([spec.seed, 1])
        texture = BandLimitedTexture(
            rng,
            components=spec.texture_components,
            period_range=spec.texture_period_range,
        )
    tpl_int, tpl_depth = render_rgbd_view(spec, texture, RigidTransform.identity())
    img_int, img_depth = render_rgbd_view(spec, texture, transform)
    tpl_inv = 1.0 / tpl_depth
    img_inv = 1.0 / img_depth

    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    xw, yw, zw, ok = warp_rigid(
        xs.ravel(), ys.ravel(), tpl_inv.ravel(), spec.intrinsics, transform,
        bounds=(spec.height, spec.width),
    )
    covisible = float(ok.mean())
    if covisible < spec.min_covisible:
        raise MotionTooLargeError(
            f"only {covisible:.0%} of pixels stay in view; need "
            f">= {spec.min_covisible:.0%}"
        )

    vals, sok = bilinear_sample(img_int, xw, yw)
    visible = occlusion_mask(xw, yw, zw, img_inv)
    use = ok & sok & visible
    err = float(np.mean(np.abs(vals[use] - tpl_int.ravel()[use])))
    if err > 1e-3:
        raise GenerationError(
            f"rgbd pair failed reprojection self-consistency: "
            f"mean abs error {err:.3e}"
        )

    template = Frame(tpl_int, tpl_inv, spec.intrinsics)
    image = Frame(img_int, img_inv, spec.intrinsics)
    return template, image, transform


def gen_rgbd_pair(spec: RgbdSceneSpec):
    """Draw a motion within bounds and render the frame pair.

    Returns (template Frame, image Frame, transform) where the transform
    maps template-camera points into the image-camera frame.
    """
    rng = np.random.default_rng(spec.seed)
    transform = draw_rigid_motion(rng, spec.max_rotation_deg, spec.max_translation)
    template, image, transform = render_rgbd_pair(spec, transform)
    if spec.noise_sigma > 0:
        tpl = np.clip(
            template.intensity + rng.normal(0, spec.noise_sigma, template.intensity.shape),
            0, 1,
        )
        img = np.clip(
            image.intensity + rng.normal(0, spec.noise_sigma, image.intensity.shape),
            0, 1,
        )
        template = Frame(tpl, template.inverse_depth, template.intrinsics)
        image = Frame(img, image.inverse_depth, image.intrinsics)
    return template, image, transform
