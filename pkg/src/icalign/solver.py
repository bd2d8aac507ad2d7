"""Unrolled inverse compositional alignment loop.

The estimation runs coarse-to-fine over an average-pooled pyramid,
starting from the identity warp at the coarsest level. Each level
precomputes the steepest-descent image once, freezes the robust weights
from the residual at level entry, then performs K inner iterations:

1. warp the image toward the template with the current parameters and
   form the per-pixel residual ``r = I(warped) - T``,
2. assemble the weighted normal equations ``H = J^T W J``, ``g = J^T W r``,
3. take a damped step ``(H + lambda diag H) dxi = g`` where lambda comes
   from the configured rule, and
4. update the parameters inverse-compositionally,
   ``xi <- xi o (dxi)^-1``.

Damping rules: ``gauss_newton`` uses lambda = 0, ``lm_heuristic`` adapts
lambda by a factor of 10 on accept/reject, and ``proposals`` solves the
system for a fixed log-spaced set of lambda candidates, evaluates the true
objective of every candidate update, and keeps the argmin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    IcAlignError,
    IllConditionedHessianError,
    NoAdmissibleStepError,
)
from .geometry import (
    AFFINE_IDENTITY,
    RigidTransform,
    affine_compose,
    affine_inverse,
    compose_rigid,
    exp_se3,
    invert_rigid,
)
from .imaging import bilinear_sample, build_inverse_depth_pyramid, build_pyramid
from .robust import RobustLossSpec, compute_weights, weighted_normal_equations, weighted_objective
from .warp import (
    DEFAULT_OCCLUSION_SLACK,
    Frame,
    occlusion_mask,
    steepest_descent_image,
    warp_affine,
    warp_rigid,
)

LAMBDA_FLOOR = 1e-12
LAMBDA_CEILING = 1e12

FAMILIES = ("affine", "rigid")
METHODS = ("gauss_newton", "lm_heuristic", "proposals")


@dataclass(frozen=True)
class SolverConfig:
    """Coarse-to-fine solver settings; defaults follow the working constants
    of four pyramid levels, three iterations per level and ten log-spaced
    damping proposals spanning [1e-5, 1e5]."""

    levels: int = 4
    iters_per_level: int = 3
    method: str = "proposals"
    proposal_count: int = 10
    lambda_range: tuple = (1e-5, 1e5)
    lm_lambda_init: float = 1e-3
    lm_factor: float = 10.0
    robust: RobustLossSpec = RobustLossSpec("huber", 0.1)
    min_step_norm: float = 1e-10

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.iters_per_level < 0:
            raise ValueError("iters_per_level must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected {METHODS}")
        lo, hi = self.lambda_range
        if not (0 < lo < hi):
            raise ValueError("lambda_range must satisfy 0 < min < max")
        if self.method == "proposals" and self.proposal_count < 2:
            raise ValueError("proposals method needs at least 2 damping proposals")
        if not self.lm_factor > 1:
            raise ValueError("lm_factor must be > 1")
        if not self.lm_lambda_init > 0:
            raise ValueError("lm_lambda_init must be positive")
        if self.min_step_norm < 0:
            raise ValueError("min_step_norm must be >= 0")


@dataclass
class ResidualField:
    """Per-pixel residual ``I(warped) - T`` with a validity mask, aligned
    with the steepest-descent rows of its level."""

    values: np.ndarray
    valid: np.ndarray
    pixel_indices: np.ndarray | None = None

    def objective(self, weights) -> float:
        return weighted_objective(self, weights)


@dataclass
class IterationRecord:
    level: int
    iteration: int
    lam: float
    objective: float
    step_norm: float
    valid_count: int
    accepted: bool
    step: list = field(default_factory=list)  # the 6-vector update taken

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "iteration": self.iteration,
            "lambda": self.lam,
            "objective": self.objective,
            "step_norm": self.step_norm,
            "valid_count": self.valid_count,
            "accepted": self.accepted,
            "step": list(self.step),
        }


@dataclass
class AlignmentResult:
    family: str
    method: str
    estimate: object  # RigidTransform or 6-vector of affine parameters
    trace: list
    converged: bool
    reason: str
    final_objective: float
    diagnostics: list = field(default_factory=list)

    def estimate_dict(self) -> dict:
        if self.family == "rigid":
            return {
                "type": "rigid",
                "matrix": self.estimate.matrix().tolist(),
            }
        return {"type": "affine", "parameters": np.asarray(self.estimate).tolist()}


# ---------------------------------------------------------------------------
# Linearized update steps
# ---------------------------------------------------------------------------


def gauss_newton_step(H, g) -> np.ndarray:
    """Solve H dxi = g by Cholesky, falling back to a symmetric
    eigendecomposition; singular beyond a 1e-12 conditioning floor raises
    :class:`IllConditionedHessianError`."""
    H = 0.5 * (np.asarray(H, dtype=np.float64) + np.asarray(H, dtype=np.float64).T)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    try:
        np.linalg.cholesky(H)
        dxi = np.linalg.solve(H, g)
        if np.all(np.isfinite(dxi)):
            return dxi
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(H)
    emax = evals[-1]
    if not emax > 0 or evals[0] <= 1e-12 * emax:
        raise IllConditionedHessianError(
            f"normal matrix is singular beyond the conditioning floor "
            f"(eigenvalues {evals[0]:.3e} .. {emax:.3e})"
        )
    return evecs @ ((evecs.T @ g) / evals)


def lm_step(H, g, lam: float) -> np.ndarray:
    """Damped step solving (H + lambda diag H) dxi = g.

    Zero diagonal entries are replaced by 1e-12 inside the damping term so
    the damped system stays definite for positive lambda.
    """
    if lam < 0:
        raise ValueError("damping must be >= 0")
    H = np.asarray(H, dtype=np.float64)
    d = np.diag(H).copy()
    d[d == 0.0] = 1e-12
    return gauss_newton_step(H + lam * np.diag(d), g)


def lm_adapt(lam: float, objective_before: float, objective_after: float, factor: float = 10.0):
    """Accept/reject rule of the damping heuristic.

    A decreased objective accepts the step and relaxes lambda by the
    factor; an increased or non-finite objective rejects it (the caller
    rolls the state back) and tightens lambda by the factor. Lambda is
    clamped to [1e-12, 1e12].
    """
    if not factor > 1:
        raise ValueError("factor must be > 1")
    if np.isfinite(objective_after) and objective_after < objective_before:
        return True, max(lam / factor, LAMBDA_FLOOR)
    return False, min(lam * factor, LAMBDA_CEILING)


def propose_dampings(cfg: SolverConfig) -> np.ndarray:
    """Deterministic log-spaced damping candidates, endpoints inclusive."""
    lo, hi = cfg.lambda_range
    return np.geomspace(lo, hi, cfg.proposal_count)


class ProposalChoice(NamedTuple):
    delta_xi: np.ndarray
    lam: float
    objective: float


def proposal_step(H, g, proposals, evaluate: Callable) -> ProposalChoice:
    """Solve the damped system for every candidate lambda, score each
    update by the true objective ``evaluate(dxi)``, and return the argmin.

    Exact ties resolve toward the larger (more conservative) lambda.
    Candidates with non-finite updates or objectives are inadmissible; if
    none is admissible a :class:`NoAdmissibleStepError` is raised.
    """
    proposals = np.sort(np.asarray(proposals, dtype=np.float64))
    if proposals.size < 2:
        raise ValueError("need at least 2 damping proposals")
    best = None
    for lam in proposals:
        try:
            dxi = lm_step(H, g, float(lam))
        except IllConditionedHessianError:
            continue
        if not np.all(np.isfinite(dxi)):
            continue
        obj = float(evaluate(dxi))
        if not np.isfinite(obj):
            continue
        if best is None or obj <= best.objective:
            best = ProposalChoice(dxi, float(lam), obj)
    if best is None:
        raise NoAdmissibleStepError("every damping proposal produced a non-finite step")
    return best


# ---------------------------------------------------------------------------
# Per-level workspaces
# ---------------------------------------------------------------------------


class _AffineLevel:
    """Precomputed data and warp closures for one pyramid level (affine)."""

    family = "affine"

    def __init__(self, level, template, grads, image):
        self.level = level
        h, w = template.shape
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        self.xs = xs.ravel()
        self.ys = ys.ravel()
        self.template_values = template.ravel()
        self.image = image
        self.sdi = steepest_descent_image(grads, "affine")
        self.geometry_pixels = self.sdi.rows.shape[0]
        self.dropped_depth = 0

    def evaluate(self, xi) -> ResidualField:
        xw, yw = warp_affine(self.xs, self.ys, xi)
        vals, ok = bilinear_sample(self.image, xw, yw)
        values = np.where(ok, vals - self.template_values, 0.0)
        return ResidualField(values, ok, self.sdi.pixel_indices)

    @staticmethod
    def compose_inverse(xi, dxi):
        return affine_compose(xi, affine_inverse(dxi))


class _RigidLevel:
    """Precomputed data and warp closures for one pyramid level (rigid)."""

    family = "rigid"

    def __init__(self, level, template, grads, template_inv_depth, image,
                 image_inv_depth, intrinsics, slack=DEFAULT_OCCLUSION_SLACK):
        self.level = level
        h, w = template.shape
        self.sdi = steepest_descent_image(
            grads, "rigid", inv_depth=template_inv_depth, intrinsics=intrinsics
        )
        idx = self.sdi.pixel_indices
        ys, xs = np.divmod(idx, w)
        self.xs = xs.astype(np.float64)
        self.ys = ys.astype(np.float64)
        self.inv_depth = template_inv_depth.ravel()[idx]
        self.template_values = template.ravel()[idx]
        self.image = image
        self.image_inv_depth = image_inv_depth
        self.intrinsics = intrinsics
        self.slack = slack
        self.geometry_pixels = idx.size
        self.dropped_depth = h * w - idx.size

    def evaluate(self, transform) -> ResidualField:
        xw, yw, zw, ok = warp_rigid(
            self.xs, self.ys, self.inv_depth, self.intrinsics, transform
        )
        vals, sok = bilinear_sample(self.image, xw, yw)
        visible = occlusion_mask(xw, yw, zw, self.image_inv_depth, self.slack)
        valid = ok & sok & visible
        values = np.where(valid, vals - self.template_values, 0.0)
        return ResidualField(values, valid, self.sdi.pixel_indices)

    @staticmethod
    def compose_inverse(transform, dxi):
        return compose_rigid(transform, invert_rigid(exp_se3(dxi)))


# ---------------------------------------------------------------------------
# Level loop and coarse-to-fine driver
# ---------------------------------------------------------------------------


def ic_level(params, workspace, cfg: SolverConfig):
    """Run the K inner iterations of one pyramid level.

    The steepest-descent image lives in ``workspace`` (already built,
    once); robust weights are computed from the residual at entry and held
    fixed. Early exit happens when the step norm falls below
    ``cfg.min_step_norm`` or fewer than 6 pixels remain valid.

    Returns ``(params, records, exit_reason, final_objective)`` where
    ``exit_reason`` is None when all K iterations ran.
    """
    residual = workspace.evaluate(params)
    weights = compute_weights(residual, cfg.robust)
    objective = residual.objective(weights)
    records = []
    exit_reason = None
    lam = cfg.lm_lambda_init

    for k in range(cfg.iters_per_level):
        active = int((residual.valid & weights.valid).sum())
        if active < 6:
            exit_reason = "too few valid pixels"
            break
        try:
            H, g = weighted_normal_equations(workspace.sdi, weights, residual)

            if cfg.method == "gauss_newton":
                lam_used = 0.0
                dxi = gauss_newton_step(H, g)
                candidate = workspace.compose_inverse(params, dxi)
                cand_res = workspace.evaluate(candidate)
                cand_obj = cand_res.objective(weights)
                accepted = True
            elif cfg.method == "lm_heuristic":
                lam_used = lam
                dxi = lm_step(H, g, lam)
                candidate = workspace.compose_inverse(params, dxi)
                cand_res = workspace.evaluate(candidate)
                cand_obj = cand_res.objective(weights)
                accepted, lam = lm_adapt(lam, objective, cand_obj, cfg.lm_factor)
            else:  # proposals
                cache = {}

                def evaluate_step(step_dxi):
                    trial = workspace.compose_inverse(params, step_dxi)
                    res = workspace.evaluate(trial)
                    obj = res.objective(weights)
                    cache[step_dxi.tobytes()] = (trial, res, obj)
                    return obj

                choice = proposal_step(H, g, propose_dampings(cfg), evaluate_step)
                dxi, lam_used = choice.delta_xi, choice.lam
                candidate, cand_res, cand_obj = cache[dxi.tobytes()]
                accepted = True
        except IcAlignError as err:
            raise type(err)(
                f"level {workspace.level}, iteration {k}: {err}"
            ) from err

        if accepted:
            params, residual, objective = candidate, cand_res, cand_obj

        step_norm = float(np.linalg.norm(dxi))
        records.append(
            IterationRecord(
                level=workspace.level,
                iteration=k,
                lam=float(lam_used),
                objective=float(cand_obj),
                step_norm=step_norm,
                valid_count=active,
                accepted=bool(accepted),
                step=np.asarray(dxi, dtype=np.float64).tolist(),
            )
        )
        if cfg.method == "lm_heuristic" and not accepted and lam_used >= LAMBDA_CEILING:
            exit_reason = "damping at ceiling"
            break
        if step_norm < cfg.min_step_norm:
            exit_reason = "step below threshold"
            break

    return params, records, exit_reason, objective


def _affine_params_to_finer(xi):
    """Re-express affine parameters one pyramid level finer.

    The linear part is scale invariant; the translation doubles, with a
    half-pixel correction from the pixel-center convention of 2x2 pooling
    (coarse center c maps to fine coordinate 2c + 0.5).
    """
    xi = np.asarray(xi, dtype=np.float64)
    out = xi.copy()
    out[4] = 2.0 * xi[4] - 0.5 * (xi[0] + xi[2])
    out[5] = 2.0 * xi[5] - 0.5 * (xi[1] + xi[3])
    return out


def align(template, image, family: str, cfg: SolverConfig | None = None, *,
          occlusion_slack: float = DEFAULT_OCCLUSION_SLACK) -> AlignmentResult:
    """Estimate the warp bringing ``image`` onto ``template``.

    Parameters
    ----------
    template, image : Frame or 2-D intensity array
        Same dimensions. The rigid family additionally needs inverse depth
        on both frames and camera intrinsics.
    family : "affine" or "rigid"
    cfg : solver configuration; defaults apply when omitted.

    Returns
    -------
    AlignmentResult with the estimate (affine 6-vector or RigidTransform
    mapping template-frame points into the image frame), the full
    per-iteration trace, and per-level diagnostics.
    """
    cfg = SolverConfig() if cfg is None else cfg
    template = Frame.wrap(template)
    image = Frame.wrap(image)
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected {FAMILIES}")
    if template.intensity.shape != image.intensity.shape:
        raise ValueError(
            f"frame dimensions differ: {template.intensity.shape} vs "
            f"{image.intensity.shape}"
        )

    if family == "rigid":
        if template.inverse_depth is None or image.inverse_depth is None:
            raise ValueError("rigid family requires inverse depth on both frames")
        intrinsics = template.intrinsics or image.intrinsics
        if intrinsics is None:
            raise ValueError("rigid family requires camera intrinsics")

    tpl_pyr = build_pyramid(template.intensity, cfg.levels)
    img_pyr = build_pyramid(image.intensity, cfg.levels)

    if family == "rigid":
        tpl_depth = build_inverse_depth_pyramid(template.inverse_depth, cfg.levels)
        img_depth = build_inverse_depth_pyramid(image.inverse_depth, cfg.levels)
        params = RigidTransform.identity()
    else:
        params = AFFINE_IDENTITY.copy()

    trace = []
    diagnostics = []
    converged = True
    reason = "completed"
    final_objective = float("nan")

    for level in range(cfg.levels - 1, -1, -1):
        if family == "affine":
            workspace = _AffineLevel(
                level, tpl_pyr.images[level], tpl_pyr.grads[level], img_pyr.images[level]
            )
        else:
            workspace = _RigidLevel(
                level,
                tpl_pyr.images[level],
                tpl_pyr.grads[level],
                tpl_depth[level],
                img_pyr.images[level],
                img_depth[level],
                intrinsics.for_level(level),
                slack=occlusion_slack,
            )
        params, records, exit_reason, final_objective = ic_level(params, workspace, cfg)
        trace.extend(records)
        diagnostics.append(
            {
                "level": level,
                "geometry_pixels": workspace.geometry_pixels,
                "dropped_depth": workspace.dropped_depth,
                "exit_reason": exit_reason or "",
            }
        )
        if exit_reason not in (None, "step below threshold"):
            converged = False
            reason = f"level {level}: {exit_reason}"
        if level > 0 and family == "affine":
            params = _affine_params_to_finer(params)

    return AlignmentResult(
        family=family,
        method=cfg.method,
        estimate=params,
        trace=trace,
        converged=converged,
        reason=reason,
        final_objective=float(final_objective),
        diagnostics=diagnostics,
    )
