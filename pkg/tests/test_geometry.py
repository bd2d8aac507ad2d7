import numpy as np
import pytest

from icalign.errors import DegenerateAffineError, NearCutLocusWarning
from icalign.geometry import (
    AFFINE_IDENTITY,
    RigidTransform,
    affine_compose,
    affine_homogeneous,
    affine_inverse,
    compose_rigid,
    exp_se3,
    invert_rigid,
    log_se3,
    rotation_angle,
    skew,
)


def random_twist(rng, max_angle=3.0, max_trans=2.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    w = axis * rng.uniform(0.0, max_angle)
    v = rng.uniform(-max_trans, max_trans, size=3)
    return np.concatenate([w, v])


def random_affine(rng, linear=0.3, trans=5.0):
    xi = np.empty(6)
    xi[:4] = rng.uniform(-linear, linear, size=4)
    xi[4:] = rng.uniform(-trans, trans, size=2)
    return xi


class TestExpLog:
    def test_zero_twist_is_identity(self):
        t = exp_se3(np.zeros(6))
        np.testing.assert_array_equal(t.rotation, np.eye(3))
        np.testing.assert_array_equal(t.translation, np.zeros(3))

    def test_quarter_turn_about_z(self):
        t = exp_se3([0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0])
        expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(t.rotation, expected, atol=1e-15)
        np.testing.assert_allclose(t.translation, 0.0, atol=1e-15)

    def test_log_identity(self):
        np.testing.assert_array_equal(log_se3(RigidTransform.identity()), np.zeros(6))

    def test_log_quarter_turn(self):
        t = exp_se3([0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0])
        xi = log_se3(t)
        np.testing.assert_allclose(xi, [0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0], atol=1e-12)

    def test_roundtrip_1000_random_twists(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(1000):
            xi = random_twist(rng, max_angle=1.0, max_trans=1.0)
            xi /= max(1.0, np.linalg.norm(xi))  # keep |xi| <= 1
            err = np.linalg.norm(log_se3(exp_se3(xi)) - xi)
            worst = max(worst, err)
        assert worst <= 1e-9

    def test_roundtrip_large_rotations(self):
        # Full property: angles up to 3 rad stay within the principal branch.
        rng = np.random.default_rng(11)
        for _ in range(1000):
            xi = random_twist(rng, max_angle=3.0, max_trans=2.0)
            err = np.linalg.norm(log_se3(exp_se3(xi)) - xi)
            assert err <= 1e-9

    def test_small_angle_branch_continuity(self):
        # Angles straddling the series/closed-form switch by one ulp: any
        # difference beyond 1e-12 would be a branch discontinuity.
        axis = np.array([0.3, -0.5, 0.8])
        axis /= np.linalg.norm(axis)
        v = np.array([0.1, 0.2, -0.3])
        below = exp_se3(np.concatenate([axis * np.nextafter(1e-8, 0.0), v]))
        above = exp_se3(np.concatenate([axis * np.nextafter(1e-8, 1.0), v]))
        assert np.max(np.abs(below.rotation - above.rotation)) <= 1e-12
        assert np.max(np.abs(below.translation - above.translation)) <= 1e-12

    def test_near_pi_warns(self):
        xi = np.array([0.0, 0.0, np.pi - 1e-10, 0.0, 0.0, 0.0])
        with pytest.warns(NearCutLocusWarning):
            log_se3(exp_se3(xi))

    def test_near_pi_still_recovers_axis(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            xi = np.concatenate([axis * (np.pi - 1e-5), rng.uniform(-1, 1, 3)])
            back = log_se3(exp_se3(xi))
            assert np.linalg.norm(back - xi) < 1e-6


class TestRigidGroup:
    def test_compose_identity(self):
        rng = np.random.default_rng(0)
        t = exp_se3(random_twist(rng))
        c = compose_rigid(RigidTransform.identity(), t)
        np.testing.assert_array_equal(c.rotation, t.rotation)
        np.testing.assert_array_equal(c.translation, t.translation)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            t = exp_se3(random_twist(rng))
            c = compose_rigid(t, invert_rigid(t))
            assert np.max(np.abs(c.rotation - np.eye(3))) <= 1e-12
            assert np.max(np.abs(c.translation)) <= 1e-12

    def test_inverse_closed_form(self):
        rng = np.random.default_rng(2)
        t = exp_se3(random_twist(rng))
        inv = invert_rigid(t)
        np.testing.assert_array_equal(inv.rotation, t.rotation.T)
        np.testing.assert_array_equal(inv.translation, -t.rotation.T @ t.translation)

    def test_associativity_matches_matrix_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            a, b, c = (exp_se3(random_twist(rng)) for _ in range(3))
            left = compose_rigid(compose_rigid(a, b), c)
            right = compose_rigid(a, compose_rigid(b, c))
            assert np.max(np.abs(left.matrix() - right.matrix())) <= 1e-12
            # matrix-product oracle
            oracle = a.matrix() @ b.matrix() @ c.matrix()
            assert np.max(np.abs(left.matrix() - oracle)) <= 1e-12

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 1.01, np.zeros(3))

    def test_rotation_angle(self):
        assert rotation_angle(np.eye(3)) == 0.0
        t = exp_se3([0.0, 0.0, 1.3, 0, 0, 0])
        assert abs(rotation_angle(t.rotation) - 1.3) < 1e-12

    def test_skew_cross_product(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-15)


class TestAffineGroup:
    def test_compose_with_zero(self):
        rng = np.random.default_rng(6)
        xi = random_affine(rng)
        np.testing.assert_allclose(affine_compose(xi, AFFINE_IDENTITY), xi, atol=0)
        np.testing.assert_allclose(affine_compose(AFFINE_IDENTITY, xi), xi, atol=0)

    def test_compose_matches_homogeneous_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            a, b = random_affine(rng), random_affine(rng)
            got = affine_homogeneous(affine_compose(a, b))
            oracle = affine_homogeneous(a) @ affine_homogeneous(b)
            assert np.max(np.abs(got - oracle)) <= 1e-12

    def test_inverse_of_zero(self):
        np.testing.assert_array_equal(affine_inverse(AFFINE_IDENTITY), AFFINE_IDENTITY)

    def test_inverse_of_pure_translation(self):
        xi = np.array([0.0, 0.0, 0.0, 0.0, 3.0, -2.0])
        np.testing.assert_allclose(
            affine_inverse(xi), [0.0, 0.0, 0.0, 0.0, -3.0, 2.0], atol=0
        )

    def test_inverse_matches_homogeneous_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(1000):
            xi = random_affine(rng)
            got = affine_homogeneous(affine_inverse(xi))
            oracle = np.linalg.inv(affine_homogeneous(xi))
            assert np.max(np.abs(got - oracle)) <= 1e-10

    def test_two_sided_inverse(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            xi = random_affine(rng)
            left = affine_compose(affine_inverse(xi), xi)
            right = affine_compose(xi, affine_inverse(xi))
            assert np.max(np.abs(left)) <= 1e-10
            assert np.max(np.abs(right)) <= 1e-10

    def test_degenerate_raises(self):
        xi = np.array([-1.0, 0.0, 0.0, 0.0, 0.0, 0.0])  # (1+a1) = 0 row
        with pytest.raises(DegenerateAffineError):
            affine_inverse(xi)
