import numpy as np
import pytest

from icalign.datagen import (
    AffineGenSpec,
    BandLimitedTexture,
    RgbdSceneSpec,
    TexturedPlane,
    TwoPlanes,
    default_affine_source,
    draw_rigid_motion,
    gen_affine_pair,
    gen_rgbd_pair,
    render_rgbd_pair,
    render_rgbd_view,
    synthesize_affine_pair,
)
from icalign.errors import InsufficientMarginError, MotionTooLargeError
from icalign.geometry import RigidTransform, exp_se3
from icalign.imaging import bilinear_sample
from icalign.warp import occlusion_mask, warp_affine, warp_rigid


class TestAffineGeneration:
    def test_zero_bounds_identity_pair(self):
        spec = AffineGenSpec(seed=0, crop=(64, 48), bounds=(0, 0, 0, 0, 0, 0))
        template, image, xi = gen_affine_pair(None, spec)
        np.testing.assert_array_equal(xi, 0.0)
        np.testing.assert_array_equal(template, image)

    def test_pure_integer_translation(self):
        source = default_affine_source(AffineGenSpec(seed=1, crop=(64, 48)))
        xi = np.array([0, 0, 0, 0, 2.0, 0.0])
        template, image, _ = synthesize_affine_pair(source, xi, (64, 48))
        # template(x) = image(x + 2) exactly on the interior
        np.testing.assert_array_equal(template[:, :-2], image[:, 2:])

    def test_self_consistency_oracle(self):
        for seed in range(5):
            spec = AffineGenSpec(seed=seed)
            template, image, xi = gen_affine_pair(None, spec)
            h, w = template.shape
            ys, xs = np.mgrid[0:h, 0:w].astype(float)
            xw, yw = warp_affine(xs.ravel(), ys.ravel(), xi)
            vals, ok = bilinear_sample(image, xw, yw)
            assert ok.mean() > 0.5
            err = np.abs(vals[ok] - template.ravel()[ok]).mean()
            assert err <= 1e-6

    def test_deterministic(self):
        a = gen_affine_pair(None, AffineGenSpec(seed=3))
        b = gen_affine_pair(None, AffineGenSpec(seed=3))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[2], b[2])

    def test_insufficient_margin(self):
        source = np.random.default_rng(4).uniform(size=(60, 70))
        with pytest.raises(InsufficientMarginError):
            synthesize_affine_pair(source, [0, 0, 0, 0, 8.0, 0], (64, 48))

    def test_source_smaller_than_crop(self):
        with pytest.raises(InsufficientMarginError):
            synthesize_affine_pair(np.zeros((32, 32)), np.zeros(6), (64, 48))

    def test_noise_option(self):
        clean = gen_affine_pair(None, AffineGenSpec(seed=5, crop=(64, 48)))
        noisy = gen_affine_pair(None, AffineGenSpec(seed=5, crop=(64, 48), noise_sigma=0.01))
        assert not np.array_equal(clean[0], noisy[0])
        assert noisy[0].min() >= 0 and noisy[0].max() <= 1

    def test_values_in_unit_range(self):
        template, image, _ = gen_affine_pair(None, AffineGenSpec(seed=6))
        for arr in (template, image):
            assert arr.min() >= 0.0 and arr.max() <= 1.0


class TestRgbdGeneration:
    def test_identity_motion_identical_frames(self):
        spec = RgbdSceneSpec(seed=0, width=64, height=48)
        template, image, _ = render_rgbd_pair(spec, RigidTransform.identity())
        np.testing.assert_array_equal(template.intensity, image.intensity)
        np.testing.assert_array_equal(template.inverse_depth, image.inverse_depth)

    def test_z_rotation_keeps_frontoparallel_depth_constant(self):
        spec = RgbdSceneSpec(
            seed=1, width=64, height=48, scene=TexturedPlane(depth=1.5, normal=(0, 0, 1))
        )
        rot = exp_se3([0.0, 0.0, np.deg2rad(2.0), 0.0, 0.0, 0.0])
        template, image, _ = render_rgbd_pair(spec, rot)
        np.testing.assert_array_equal(template.inverse_depth, 1.0 / 1.5)
        np.testing.assert_array_equal(image.inverse_depth, 1.0 / 1.5)

    def test_reprojection_self_consistency(self):
        for seed in range(4):
            spec = RgbdSceneSpec(seed=seed)
            template, image, t_gt = gen_rgbd_pair(spec)
            h, w = template.intensity.shape
            ys, xs = np.mgrid[0:h, 0:w].astype(float)
            xw, yw, zw, ok = warp_rigid(
                xs.ravel(), ys.ravel(), template.inverse_depth.ravel(),
                spec.intrinsics, t_gt,
            )
            vals, sok = bilinear_sample(image.intensity, xw, yw)
            vis = occlusion_mask(xw, yw, zw, image.inverse_depth)
            use = ok & sok & vis
            err = np.abs(vals[use] - template.intensity.ravel()[use]).mean()
            assert err <= 1e-3

    def test_two_plane_scene_renders_both_depths(self):
        spec = RgbdSceneSpec(
            seed=2, width=64, height=48, scene=TwoPlanes(near=1.2, far=2.0, split=0.0)
        )
        template, image, _ = gen_rgbd_pair(spec)
        d = template.inverse_depth
        assert np.any(np.isclose(d, 1 / 1.2)) and np.any(np.isclose(d, 1 / 2.0))

    def test_two_plane_occlusion_structure(self):
        # lateral motion makes the near half-plane cover part of the far one
        spec = RgbdSceneSpec(
            seed=3, width=64, height=48, scene=TwoPlanes(near=1.0, far=2.0, split=0.0)
        )
        shift = RigidTransform(np.eye(3), [0.05, 0.0, 0.0])
        template, image, _ = render_rgbd_pair(spec, shift)
        h, w = template.intensity.shape
        ys, xs = np.mgrid[0:h, 0:w].astype(float)
        xw, yw, zw, ok = warp_rigid(
            xs.ravel(), ys.ravel(), template.inverse_depth.ravel(),
            spec.intrinsics, shift, bounds=(h, w),
        )
        vis = occlusion_mask(xw, yw, zw, image.inverse_depth)
        far = np.isclose(template.inverse_depth.ravel(), 0.5)
        occluded_far = far & ok & ~vis
        assert occluded_far.sum() > 0  # some far pixels hidden behind the near plane

    def test_depth_strictly_positive(self):
        template, image, _ = gen_rgbd_pair(RgbdSceneSpec(seed=4))
        assert template.inverse_depth.min() > 0
        assert image.inverse_depth.min() > 0

    def test_deterministic(self):
        a = gen_rgbd_pair(RgbdSceneSpec(seed=5))
        b = gen_rgbd_pair(RgbdSceneSpec(seed=5))
        np.testing.assert_array_equal(a[0].intensity, b[0].intensity)
        np.testing.assert_array_equal(a[1].inverse_depth, b[1].inverse_depth)
        np.testing.assert_array_equal(a[2].matrix(), b[2].matrix())

    def test_motion_too_large(self):
        spec = RgbdSceneSpec(seed=6, width=64, height=48)
        big = RigidTransform(np.eye(3), [1.0, 0.0, 0.0])
        with pytest.raises(MotionTooLargeError):
            render_rgbd_pair(spec, big)

    def test_motion_draw_within_bounds(self):
        rng = np.random.default_rng(7)
        from icalign.geometry import rotation_angle

        for _ in range(200):
            t = draw_rigid_motion(rng, 3.0, 0.03)
            assert np.rad2deg(rotation_angle(t.rotation)) <= 3.0 + 1e-9
            assert np.linalg.norm(t.translation) <= 0.03 + 1e-12

    def test_tilted_plane_depth_varies(self):
        spec = RgbdSceneSpec(
            seed=8, width=64, height=48,
            scene=TexturedPlane(depth=1.5, normal=(0.2, -0.1, 1.0)),
        )
        intensity, depth = render_rgbd_view(
            spec, BandLimitedTexture(np.random.default_rng(0), period_range=(0.3, 1.0)),
            RigidTransform.identity(),
        )
        assert depth.std() > 1e-3
        assert 0.1 < depth.min() and depth.max() < 10.0

    def test_scene_validation(self):
        with pytest.raises(ValueError):
            TexturedPlane(depth=0.05)
        with pytest.raises(ValueError):
            TwoPlanes(near=2.0, far=1.0)


class TestTexture:
    def test_range_and_determinism(self):
        tex_a = BandLimitedTexture(np.random.default_rng(9))
        tex_b = BandLimitedTexture(np.random.default_rng(9))
        ys, xs = np.mgrid[0:50, 0:50].astype(float)
        va, vb = tex_a(xs, ys), tex_b(xs, ys)
        np.testing.assert_array_equal(va, vb)
        assert va.min() >= 0.0 and va.max() <= 1.0
