import numpy as np
import pytest

from icalign.errors import UnderdeterminedSystemError
from icalign.robust import (
    RobustLossSpec,
    compute_weights,
    weighted_normal_equations,
    weighted_objective,
)
from icalign.solver import ResidualField
from icalign.warp import SteepestDescentImage


def field(values, valid=None):
    values = np.asarray(values, dtype=float)
    if valid is None:
        valid = np.ones(values.shape, dtype=bool)
    return ResidualField(values, np.asarray(valid, dtype=bool))


def sdi_from_rows(rows):
    rows = np.asarray(rows, dtype=float)
    return SteepestDescentImage(rows, np.arange(len(rows)), (1, len(rows)))


class TestComputeWeights:
    def test_none_gives_unit_weights(self):
        wf = compute_weights(field(np.linspace(-3, 3, 7)), RobustLossSpec("none", 1.0))
        np.testing.assert_array_equal(wf.weights, 1.0)

    def test_huber_quadratic_zone(self):
        wf = compute_weights(field(np.zeros(5)), RobustLossSpec("huber", 0.1))
        np.testing.assert_array_equal(wf.weights, 1.0)

    def test_huber_outside_zone(self):
        wf = compute_weights(field([0.2]), RobustLossSpec("huber", 0.1))
        np.testing.assert_allclose(wf.weights, [0.5], atol=1e-15)

    def test_tukey_boundary_and_zero(self):
        wf = compute_weights(field([0.3, 0.0]), RobustLossSpec("tukey", 0.3))
        np.testing.assert_allclose(wf.weights, [0.0, 1.0], atol=1e-15)

    def test_invalid_pixels_weight_zero(self):
        wf = compute_weights(
            field([0.0, 0.0], valid=[True, False]), RobustLossSpec("huber", 0.1)
        )
        np.testing.assert_array_equal(wf.weights, [1.0, 0.0])
        np.testing.assert_array_equal(wf.valid, [True, False])

    @pytest.mark.parametrize("kind,scale", [("huber", 0.1), ("tukey", 0.3)])
    def test_even_and_nonincreasing(self, kind, scale):
        r = np.linspace(0, 1, 101)
        spec = RobustLossSpec(kind, scale)
        w_pos = compute_weights(field(r), spec).weights
        w_neg = compute_weights(field(-r), spec).weights
        np.testing.assert_array_equal(w_pos, w_neg)
        assert w_pos[0] == 1.0
        assert np.all(np.diff(w_pos) <= 1e-15)
        assert np.all((w_pos >= 0) & (w_pos <= 1))

    @pytest.mark.parametrize("kind", ["huber", "tukey"])
    def test_scale_equivariance(self, kind):
        rng = np.random.default_rng(0)
        r = rng.normal(scale=0.2, size=50)
        for factor in (0.5, 3.0, 17.0):
            w1 = compute_weights(field(r), RobustLossSpec(kind, 0.1)).weights
            w2 = compute_weights(
                field(r * factor), RobustLossSpec(kind, 0.1 * factor)
            ).weights
            np.testing.assert_allclose(w1, w2, atol=1e-14)

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            RobustLossSpec("huber", 0.0)
        with pytest.raises(ValueError):
            RobustLossSpec("cauchy", 1.0)


class TestNormalEquations:
    def test_all_zero_weights(self):
        # tukey clips every residual: sums vanish but the system stays defined
        rows = np.eye(6)
        res = field(np.full(6, 10.0))
        wf = compute_weights(res, RobustLossSpec("tukey", 0.1))
        H, g = weighted_normal_equations(sdi_from_rows(rows), wf, res)
        np.testing.assert_array_equal(H, 0.0)
        np.testing.assert_array_equal(g, 0.0)

    def test_single_contributing_pixel(self):
        # one unit-weight pixel among zero-weight ones: H and g reduce to that
        # pixel's outer product over the valid count
        rng = np.random.default_rng(1)
        rows = rng.normal(size=(6, 6))
        res = field([0.05, 9.0, 9.0, 9.0, 9.0, 9.0])  # only the first in-zone
        wf = compute_weights(res, RobustLossSpec("tukey", 0.3))
        assert wf.weights[1:].max() == 0.0
        w0 = wf.weights[0]
        H, g = weighted_normal_equations(sdi_from_rows(rows), wf, res)
        j = rows[0]
        np.testing.assert_allclose(H, w0 * np.outer(j, j) / 6, atol=1e-14)
        np.testing.assert_allclose(g, w0 * j * 0.05 / 6, atol=1e-14)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        rows = rng.normal(size=(100, 6))
        res = field(rng.normal(scale=0.3, size=100), valid=rng.uniform(size=100) > 0.1)
        wf = compute_weights(res, RobustLossSpec("huber", 0.1))
        H, g = weighted_normal_equations(sdi_from_rows(rows), wf, res)
        m = int(res.valid.sum())
        W = np.diag(wf.weights * res.valid)
        H_oracle = rows.T @ W @ rows / m
        g_oracle = rows.T @ W @ res.values / m
        assert np.max(np.abs(H - H_oracle)) <= 1e-10
        assert np.max(np.abs(g - g_oracle)) <= 1e-10
        # symmetry and PSD
        np.testing.assert_array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() >= -1e-12

    def test_underdetermined_raises(self):
        rows = np.ones((5, 6))
        res = field(np.zeros(5))
        wf = compute_weights(res, RobustLossSpec("none", 1.0))
        with pytest.raises(UnderdeterminedSystemError):
            weighted_normal_equations(sdi_from_rows(rows), wf, res)

    def test_objective_is_mean_weighted_square(self):
        rng = np.random.default_rng(3)
        r = rng.normal(size=20)
        res = field(r)
        wf = compute_weights(res, RobustLossSpec("huber", 0.1))
        expected = np.sum(wf.weights * r * r) / 20
        np.testing.assert_allclose(weighted_objective(res, wf), expected, atol=1e-14)
