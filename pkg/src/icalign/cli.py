"""Command-line surface: align, gen, eval, selftest.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Flag values
override config-file entries, which override built-in defaults. The
IC_ALIGN_THREADS environment variable caps eval workers (0 = auto).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as icio
from .datagen import AffineGenSpec, RgbdSceneSpec, gen_affine_pair, gen_rgbd_pair
from .errors import IcAlignError
from .metrics import affine_l1, epe3d, relative_pose_error, success_ratio
from .robust import RobustLossSpec
from .solver import METHODS, SolverConfig, align
from .warp import CameraIntrinsics, Frame

USAGE_EXIT = 1
RUNTIME_EXIT = 2

SOLVER_DEFAULTS = {
    "levels": 4,
    "iters_per_level": 3,
    "method": "proposals",
    "proposal_count": 10,
    "lambda_min": 1e-5,
    "lambda_max": 1e5,
    "lm_lambda_init": 1e-3,
    "lm_factor": 10.0,
    "robust_kind": "huber",
    "robust_scale": 0.1,
    "min_step_norm": 1e-10,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(USAGE_EXIT)


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--config", help="JSON config file; flags override its entries")
    g.add_argument("--levels", type=int)
    g.add_argument("--iters-per-level", type=int, dest="iters_per_level")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--proposal-count", type=int, dest="proposal_count")
    g.add_argument("--lambda-min", type=float, dest="lambda_min")
    g.add_argument("--lambda-max", type=float, dest="lambda_max")
    g.add_argument("--lm-lambda-init", type=float, dest="lm_lambda_init")
    g.add_argument("--lm-factor", type=float, dest="lm_factor")
    g.add_argument("--robust-kind", choices=("none", "huber", "tukey"), dest="robust_kind")
    g.add_argument("--robust-scale", type=float, dest="robust_scale")
    g.add_argument("--min-step-norm", type=float, dest="min_step_norm")


def solver_config_from_args(args) -> SolverConfig:
    """Merge defaults <- config file <- command-line flags."""
    merged = dict(SOLVER_DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise IcAlignError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise IcAlignError(f"config file {path} is not valid JSON: {err}") from err
        unknown = set(loaded) - set(SOLVER_DEFAULTS)
        if unknown:
            raise IcAlignError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in SOLVER_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return SolverConfig(
        levels=merged["levels"],
        iters_per_level=merged["iters_per_level"],
        method=merged["method"],
        proposal_count=merged["proposal_count"],
        lambda_range=(merged["lambda_min"], merged["lambda_max"]),
        lm_lambda_init=merged["lm_lambda_init"],
        lm_factor=merged["lm_factor"],
        robust=RobustLossSpec(merged["robust_kind"], merged["robust_scale"]),
        min_step_norm=merged["min_step_norm"],
    )


def _worker_count(n_tasks: int) -> int:
    raw = os.environ.get("IC_ALIGN_THREADS", "0")
    try:
        k = int(raw)
    except ValueError:
        k = 0
    if k <= 0:
        k = os.cpu_count() or 1
    return max(1, min(k, n_tasks))


# ---------------------------------------------------------------------------
# align
# ---------------------------------------------------------------------------


def cmd_align(args) -> int:
    if args.family == "rigid" and not (
        args.template_depth and args.image_depth and args.intrinsics
    ):
        sys.stderr.write(
            "error: --family rigid requires --template-depth, --image-depth "
            "and --intrinsics\n"
        )
        return USAGE_EXIT
    cfg = solver_config_from_args(args)

    template = icio.load_frame(
        icio.FramePaths(args.template, args.template_depth, args.intrinsics),
        depth_scale=args.depth_scale,
    )
    image = icio.load_frame(
        icio.FramePaths(args.image, args.image_depth, args.intrinsics),
        depth_scale=args.depth_scale,
    )
    result = align(template, image, args.family, cfg)

    if args.family == "affine":
        estimate = " ".join(f"{v:.6g}" for v in result.estimate)
    else:
        from .geometry import rotation_angle

        pose = result.estimate
        rot_deg = np.rad2deg(rotation_angle(pose.rotation))
        estimate = (
            f"rot={rot_deg:.4g} deg "
            "t=[" + " ".join(f"{v:.6g}" for v in pose.translation) + "] m"
        )
    print(
        f"{args.family} {cfg.method}: objective={result.final_objective:.6e} "
        f"iterations={len(result.trace)} converged={result.converged} "
        f"estimate: {estimate}"
    )
    if args.report:
        icio.write_report(result, args.report, args.format)
    if args.dump_debug_images:
        _dump_debug_images(args.dump_debug_images, template, image, result)
    return 0 if result.converged else RUNTIME_EXIT


def _dump_debug_images(outdir, template, image, result):
    from .imaging import bilinear_sample
    from .warp import warp_affine, warp_rigid

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tpl = template.intensity
    h, w = tpl.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if result.family == "affine":
        xw, yw = warp_affine(xs.ravel(), ys.ravel(), result.estimate)
    else:
        xw, yw, _, _ = warp_rigid(
            xs.ravel(),
            ys.ravel(),
            template.inverse_depth.ravel(),
            template.intrinsics,
            result.estimate,
        )
    warped, ok = bilinear_sample(image.intensity, xw, yw)
    warped = np.where(ok, warped, 0.0).reshape(h, w)
    icio.save_intensity(outdir / "template.png", tpl)
    icio.save_intensity(outdir / "warped.png", warped)
    icio.save_intensity(outdir / "residual.png", np.abs(warped - tpl))


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    pairs = []
    if args.family == "affine":
        source = icio.load_intensity(args.source) if args.source else None
        for i in range(args.count):
            spec = AffineGenSpec(
                seed=args.seed + i,
                crop=(args.width, args.height),
                noise_sigma=args.noise_sigma,
            )
            template, image, xi = gen_affine_pair(source, spec)
            tname, iname = f"pair_{i:04d}_template.png", f"pair_{i:04d}_image.png"
            icio.save_intensity(outdir / tname, template)
            icio.save_intensity(outdir / iname, image)
            pairs.append(
                {
                    "id": f"pair_{i:04d}",
                    "seed": spec.seed,
                    "template": tname,
                    "image": iname,
                    "xi_gt": xi.tolist(),
                }
            )
        manifest = {
            "schema_version": 1,
            "family": "affine",
            "seed": args.seed,
            "count": args.count,
            "width": args.width,
            "height": args.height,
            "pairs": pairs,
        }
    else:
        intrinsics = None
        for i in range(args.count):
            spec = RgbdSceneSpec(
                seed=args.seed + i,
                width=args.width,
                height=args.height,
                noise_sigma=args.noise_sigma,
            )
            template, image, transform = gen_rgbd_pair(spec)
            intrinsics = spec.intrinsics
            names = {
                "template": f"pair_{i:04d}_template.png",
                "image": f"pair_{i:04d}_image.png",
                "template_depth": f"pair_{i:04d}_template_depth.png",
                "image_depth": f"pair_{i:04d}_image_depth.png",
            }
            icio.save_intensity(outdir / names["template"], template.intensity)
            icio.save_intensity(outdir / names["image"], image.intensity)
            icio.save_depth(outdir / names["template_depth"], template.inverse_depth)
            icio.save_depth(outdir / names["image_depth"], image.inverse_depth)
            pairs.append(
                {
                    "id": f"pair_{i:04d}",
                    "seed": spec.seed,
                    **names,
                    "pose_gt": transform.matrix().tolist(),
                }
            )
        icio.save_intrinsics(outdir / "intrinsics.txt", intrinsics)
        manifest = {
            "schema_version": 1,
            "family": "rigid",
            "seed": args.seed,
            "count": args.count,
            "width": args.width,
            "height": args.height,
            "depth_scale": 5000.0,
            "intrinsics": [intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy],
            "pairs": pairs,
        }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {args.count} {args.family} pairs to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _eval_affine_pair(entry, base, cfg):
    template = icio.load_intensity(base / entry["template"])
    image = icio.load_intensity(base / entry["image"])
    result = align(template, image, "affine", cfg)
    return {
        "id": entry["id"],
        "converged": result.converged,
        "iterations": len(result.trace),
        "final_objective": result.final_objective,
        "l1_error": affine_l1(result.estimate, entry["xi_gt"]),
    }


def _eval_rigid_pair(entry, base, cfg, intrinsics, depth_scale):
    template = Frame(
        icio.load_intensity(base / entry["template"]),
        icio.load_depth(base / entry["template_depth"], depth_scale),
        intrinsics,
    )
    image = Frame(
        icio.load_intensity(base / entry["image"]),
        icio.load_depth(base / entry["image_depth"], depth_scale),
        intrinsics,
    )
    from .geometry import RigidTransform

    gt = RigidTransform.from_matrix(np.asarray(entry["pose_gt"]))
    result = align(template, image, "rigid", cfg)
    pose_err = relative_pose_error(result.estimate, gt)

    d = template.inverse_depth
    ok = d > 0
    ys, xs = np.nonzero(ok)
    z = 1.0 / d[ok]
    pts = np.stack(
        [
            (xs - intrinsics.cx) / intrinsics.fx * z,
            (ys - intrinsics.cy) / intrinsics.fy * z,
            z,
        ],
        axis=-1,
    )
    return {
        "id": entry["id"],
        "converged": result.converged,
        "iterations": len(result.trace),
        "final_objective": result.final_objective,
        "rot_err_deg": pose_err.rotation_deg,
        "trans_err_cm": pose_err.translation_cm,
        "epe3d_cm": epe3d(pts, result.estimate, gt),
    }


def cmd_eval(args) -> int:
    cfg = solver_config_from_args(args)
    manifest_path = Path(args.manifest)
    base = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    family = manifest["family"]
    entries = manifest["pairs"]

    if family == "affine":
        task = lambda entry: _eval_affine_pair(entry, base, cfg)
    else:
        intr = CameraIntrinsics(*manifest["intrinsics"])
        scale = manifest.get("depth_scale", 5000.0)
        task = lambda entry: _eval_rigid_pair(entry, base, cfg, intr, scale)

    workers = _worker_count(len(entries))
    if workers == 1:
        rows = [task(e) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(task, entries))

    if family == "affine":
        l1 = np.array([r["l1_error"] for r in rows])
        print(f"pairs: {len(rows)}  method: {cfg.method}")
        print(f"mean L1: {l1.mean():.6g}   median L1: {np.median(l1):.6g}")
        print(f"fraction L1 <= 0.05: {np.mean(l1 <= 0.05):.2%}")
    else:
        from .metrics import PoseError

        errs = [PoseError(r["rot_err_deg"], r["trans_err_cm"]) for r in rows]
        rot = np.array([e.rotation_deg for e in errs])
        trans = np.array([e.translation_cm for e in errs])
        epe = np.array([r["epe3d_cm"] for r in rows])
        print(f"pairs: {len(rows)}  method: {cfg.method}")
        print(f"mean RPE: {rot.mean():.4f} deg / {trans.mean():.4f} cm")
        print(f"mean EPE3D: {epe.mean():.4f} cm")
        print(f"success ratio (5 deg, 5 cm): {success_ratio(errs):.2%}")

    icio.write_report({"schema_version": 1, "pairs": rows}, args.out, "csv")
    if args.report_json:
        icio.write_report(
            {"schema_version": 1, "family": family, "pairs": rows},
            args.report_json,
            "json",
        )
    return 0


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------


def _selftest_checks():
    from .geometry import exp_se3, log_se3
    from .imaging import build_pyramid, sobel_gradients
    from .warp import (
        reset_sdi_build_count,
        sdi_build_count,
        warp_jacobian_affine,
        warp_jacobian_rigid,
        warp_affine,
        warp_rigid,
    )
    from .geometry import affine_compose, affine_homogeneous, affine_inverse

    checks = []
    rng = np.random.default_rng(12345)

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except AssertionError as err:
            checks.append((name, False, str(err)))

    def twist_roundtrip():
        for _ in range(200):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            xi = np.concatenate([axis * rng.uniform(0, 3), rng.uniform(-2, 2, 3)])
            err = np.linalg.norm(log_se3(exp_se3(xi)) - xi)
            assert err <= 1e-9, f"roundtrip error {err:.3e}"

    def affine_group():
        for _ in range(200):
            a = np.concatenate([rng.uniform(-0.3, 0.3, 4), rng.uniform(-5, 5, 2)])
            b = np.concatenate([rng.uniform(-0.3, 0.3, 4), rng.uniform(-5, 5, 2)])
            lhs = affine_homogeneous(affine_compose(a, b))
            rhs = affine_homogeneous(a) @ affine_homogeneous(b)
            assert np.max(np.abs(lhs - rhs)) <= 1e-10, "composition oracle"
            inv = affine_homogeneous(affine_inverse(a))
            assert np.max(np.abs(inv - np.linalg.inv(affine_homogeneous(a)))) <= 1e-10

    def rigid_jacobian_fd():
        h = 1e-6
        for _ in range(50):
            intr = CameraIntrinsics(
                rng.uniform(50, 500), rng.uniform(50, 500),
                rng.uniform(100, 300), rng.uniform(80, 250),
            )
            x, y = rng.uniform(0, 640), rng.uniform(0, 480)
            d = rng.uniform(0.1, 2.0)
            pu, pv = (x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy
            analytic = warp_jacobian_rigid(pu, pv, d, intr)
            fd = np.zeros((2, 6))
            for i in range(6):
                xi = np.zeros(6)
                xi[i] = h
                xp, yp, _, _ = warp_rigid(x, y, d, intr, exp_se3(xi))
                xm, ym, _, _ = warp_rigid(x, y, d, intr, exp_se3(-xi))
                fd[:, i] = [(xp - xm) / (2 * h), (yp - ym) / (2 * h)]
            rel = np.max(np.abs(fd - analytic)) / max(1.0, np.max(np.abs(analytic)))
            assert rel <= 1e-4, f"rigid jacobian FD error {rel:.3e}"

    def affine_jacobian_fd():
        h = 1e-6
        for _ in range(50):
            x, y = rng.uniform(-50, 300, 2)
            analytic = warp_jacobian_affine(x, y)
            fd = np.zeros((2, 6))
            for i in range(6):
                xi = np.zeros(6)
                xi[i] = h
                xp, yp = warp_affine(x, y, xi)
                xm, ym = warp_affine(x, y, -xi)
                fd[:, i] = [(xp - xm) / (2 * h), (yp - ym) / (2 * h)]
            rel = np.max(np.abs(fd - analytic)) / max(1.0, np.max(np.abs(analytic)))
            assert rel <= 1e-9, f"affine jacobian FD error {rel:.3e}"

    def sobel_ramp():
        ys, xs = np.mgrid[0:10, 0:12].astype(float)
        gx, gy = sobel_gradients(xs)
        assert np.allclose(gx[:, 1:-1], 1.0, atol=1e-12), "ramp gradient"
        assert np.allclose(gy, 0.0, atol=1e-12), "ramp cross gradient"

    def pyramid_means():
        img = rng.uniform(size=(32, 32))
        pyr = build_pyramid(img, 3)
        coarse = pyr.images[1]
        blk = img.reshape(16, 2, 16, 2).mean(axis=(1, 3))
        assert np.allclose(coarse, blk, atol=1e-12), "blockwise mean"

    def solver_precompute_and_convergence():
        spec = AffineGenSpec(seed=99, crop=(96, 80))
        template, image, xi_gt = gen_affine_pair(None, spec)
        reset_sdi_build_count()
        cfg = SolverConfig(levels=3, iters_per_level=4)
        result = align(template, image, "affine", cfg)
        assert sdi_build_count() == cfg.levels, "steepest-descent image rebuilt"
        err = affine_l1(result.estimate, xi_gt)
        assert err <= 1e-3, f"affine convergence error {err:.3e}"

    check("se3 exp/log roundtrip", twist_roundtrip)
    check("affine group laws", affine_group)
    check("rigid warp jacobian vs finite differences", rigid_jacobian_fd)
    check("affine warp jacobian vs finite differences", affine_jacobian_fd)
    check("sobel unit-ramp calibration", sobel_ramp)
    check("pyramid blockwise means", pyramid_means)
    check("ic precompute + affine convergence", solver_precompute_and_convergence)
    return checks


def cmd_selftest(args) -> int:
    checks = _selftest_checks()
    failed = 0
    for name, ok, detail in checks:
        if ok:
            print(f"ok: {name}")
        else:
            failed += 1
            print(f"FAIL: {name} ({detail})")
    if failed:
        print(f"{failed} of {len(checks)} checks failed")
        return RUNTIME_EXIT
    print(f"all {len(checks)} checks passed")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="icalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_align = sub.add_parser("align", parents=[], help="align one frame pair")
    p_align.add_argument("--family", choices=("affine", "rigid"), required=True)
    p_align.add_argument("--template", required=True)
    p_align.add_argument("--image", required=True)
    p_align.add_argument("--template-depth", dest="template_depth")
    p_align.add_argument("--image-depth", dest="image_depth")
    p_align.add_argument("--intrinsics")
    p_align.add_argument("--depth-scale", type=float, default=5000.0, dest="depth_scale")
    p_align.add_argument("--report", help="write a JSON/CSV report here")
    p_align.add_argument("--format", choices=("json", "csv"), default="json")
    p_align.add_argument("--dump-debug-images", dest="dump_debug_images")
    _add_solver_flags(p_align)
    p_align.set_defaults(fn=cmd_align)

    p_gen = sub.add_parser("gen", help="generate synthetic pairs + manifest")
    p_gen.add_argument("--family", choices=("affine", "rigid"), required=True)
    p_gen.add_argument("--count", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--width", type=int, default=None)
    p_gen.add_argument("--height", type=int, default=None)
    p_gen.add_argument("--source", help="external source image for affine pairs")
    p_gen.add_argument("--noise-sigma", type=float, default=0.0, dest="noise_sigma")
    p_gen.set_defaults(fn=cmd_gen)

    p_eval = sub.add_parser("eval", help="run a batch from a manifest")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--out", required=True, help="CSV report path")
    p_eval.add_argument("--report-json", dest="report_json")
    _add_solver_flags(p_eval)
    p_eval.set_defaults(fn=cmd_eval)

    p_self = sub.add_parser("selftest", help="run built-in invariant checks")
    p_self.set_defaults(fn=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen":
        if args.width is None:
            args.width = 320 if args.family == "affine" else 160
        if args.height is None:
            args.height = 240 if args.family == "affine" else 120
    try:
        return args.fn(args)
    except IcAlignError as err:
        sys.stderr.write(f"error: {err}\n")
        return RUNTIME_EXIT
    except (ValueError, OSError) as err:
        sys.stderr.write(f"error: {err}\n")
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
