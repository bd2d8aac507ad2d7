"""Diagonal robust weighting of per-pixel residuals.

Classical M-estimator weight functions fill the robust-loss slot of the
weighted least-squares objective ``r^T W r``. Weights are computed from the
residual once at the entry of each pyramid level and held fixed for all
inner iterations there, so the different step rules stay comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnderdeterminedSystemError

WEIGHT_KINDS = ("none", "huber", "tukey")


@dataclass(frozen=True)
class RobustLossSpec:
    """Weight-function choice: ``none``, ``huber`` (delta) or ``tukey`` (c)."""

    kind: str = "huber"
    scale: float = 0.1

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown robust kind {self.kind!r}; expected {WEIGHT_KINDS}")
        if self.kind != "none" and not self.scale > 0:
            raise ValueError("robust scale must be positive")


@dataclass
class WeightField:
    """Per-pixel weights in [0, 1]; invalid pixels carry weight exactly 0."""

    weights: np.ndarray
    valid: np.ndarray  # pixels whose residual was valid when weights froze


def compute_weights(residuals, spec: RobustLossSpec) -> WeightField:
    """Evaluate the robust weight function on a residual field.

    ``none`` gives unit weights, ``huber`` gives 1 inside the quadratic
    zone and delta/|r| outside, ``tukey`` gives (1 - (r/c)^2)^2 inside its
    support and 0 outside. Invalid residual pixels get weight 0.
    """
    r = np.asarray(residuals.values, dtype=np.float64)
    valid = np.asarray(residuals.valid, dtype=bool)
    w = np.zeros_like(r)
    if spec.kind == "none":
        w[valid] = 1.0
    elif spec.kind == "huber":
        a = np.abs(r[valid])
        w[valid] = np.where(a <= spec.scale, 1.0, spec.scale / np.maximum(a, spec.scale))
    else:  # tukey
        a = np.abs(r[valid])
        u = np.minimum(a / spec.scale, 1.0)
        w[valid] = np.where(a <= spec.scale, (1.0 - u * u) ** 2, 0.0)
    return WeightField(weights=w, valid=valid.copy())


def weighted_normal_equations(sdi, weights: WeightField, residuals):
    """Accumulate the 6x6 normal matrix and right-hand side.

    H = sum w J^T J / M and g = sum w J^T r / M over the M pixels valid in
    both the weight field and the current residual. Accumulation runs in
    ascending pixel order with a fixed reduction, so results are
    reproducible bit-for-bit.

    Raises
    ------
    UnderdeterminedSystemError
        If fewer than 6 pixels are valid.
    """
    active = np.asarray(residuals.valid, dtype=bool) & weights.valid
    m = int(active.sum())
    if m < 6:
        raise UnderdeterminedSystemError(f"only {m} valid pixels; need at least 6")
    rows = sdi.rows[active]
    w = weights.weights[active]
    r = np.asarray(residuals.values, dtype=np.float64)[active]
    jw = rows * w[:, None]
    # einsum keeps a deterministic single-threaded accumulation order
    h = np.einsum("ni,nj->ij", jw, rows) / m
    h = 0.5 * (h + h.T)
    g = np.einsum("ni,n->i", jw, r) / m
    return h, g


def weighted_objective(residuals, weights: WeightField) -> float:
    """Mean weighted squared residual over the jointly valid pixels."""
    active = np.asarray(residuals.valid, dtype=bool) & weights.valid
    m = int(active.sum())
    if m == 0:
        return float("nan")
    r = np.asarray(residuals.values, dtype=np.float64)[active]
    w = weights.weights[active]
    return float(np.dot(w * r, r) / m)
