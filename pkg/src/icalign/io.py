"""File-format boundary: images, depth maps, intrinsics, poses, reports.

Supported image inputs are 8- or 16-bit grayscale PNG/PGM and RGB PNG;
intensities normalize to [0, 1] on load. Depth maps follow the 16-bit PNG
convention ``raw / scale = meters`` (scale 5000 by default) with 0 marking
missing data; loaded depths outside [0.5, 5.0] m are treated as invalid.
Trajectories use the text format ``timestamp tx ty tz qx qy qz qw`` per
line with a Hamilton (qx, qy, qz, qw) quaternion.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError
from .geometry import RigidTransform
from .solver import AlignmentResult
from .warp import CameraIntrinsics, Frame

REPORT_SCHEMA_VERSION = 1

DEPTH_MIN_M = 0.5
DEPTH_MAX_M = 5.0

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FramePaths:
    intensity: str
    depth: str | None = None
    intrinsics: str | None = None


def load_intensity(path) -> np.ndarray:
    """Load a grayscale intensity image normalized to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.float64) / 255.0
            elif mode in ("I", "I;16", "I;16B"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode == "RGB":
                rgb = np.asarray(im, dtype=np.float64) / 255.0
                arr = _LUMA[0] * rgb[..., 0] + _LUMA[1] * rgb[..., 1] + _LUMA[2] * rgb[..., 2]
            else:
                raise FormatError(
                    f"{path}: unsupported image mode {mode!r}; expected 8/16-bit "
                    "grayscale or RGB"
                )
    except FileNotFoundError as err:
        raise FormatError(f"{path}: file not found") from err
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as err:
        raise FormatError(f"{path}: not a readable PNG/PGM image ({err})") from err
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel image")
    return np.clip(arr, 0.0, 1.0)


def save_intensity(path, img, bit_depth: int = 16) -> None:
    """Write an intensity image; 16-bit PNG by default, 8-bit for PGM."""
    path = Path(path)
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if path.suffix.lower() == ".pgm" or bit_depth == 8:
        data = np.round(img * 255.0).astype(np.uint8)
        Image.fromarray(data).save(path)
    elif bit_depth == 16:
        data = np.round(img * 65535.0).astype(np.uint16)
        Image.fromarray(data).save(path)
    else:
        raise ValueError(f"unsupported bit depth {bit_depth}")


def load_depth(path, scale: float = 5000.0) -> np.ndarray:
    """Load a 16-bit depth PNG as inverse depth (1/meters).

    Raw zeros and depths outside [0.5, 5.0] m become invalid (0).
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("I", "I;16", "I;16B"):
                raise FormatError(f"{path}: depth maps must be 16-bit PNG, got mode {im.mode!r}")
            raw = np.asarray(im, dtype=np.float64)
    except FileNotFoundError as err:
        raise FormatError(f"{path}: file not found") from err
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as err:
        raise FormatError(f"{path}: not a readable PNG image ({err})") from err
    depth = raw / scale
    valid = (raw > 0) & (depth >= DEPTH_MIN_M) & (depth <= DEPTH_MAX_M)
    inv = np.zeros_like(depth)
    inv[valid] = 1.0 / depth[valid]
    return np.clip(inv, 0.0, 10.0)


def save_depth(path, inverse_depth, scale: float = 5000.0) -> None:
    """Write inverse depth as a 16-bit PNG with the given raw scale."""
    inv = np.asarray(inverse_depth, dtype=np.float64)
    depth = np.zeros_like(inv)
    ok = inv > 0
    depth[ok] = 1.0 / inv[ok]
    raw = np.round(depth * scale)
    if raw.max() > 65535:
        raise ValueError("depth exceeds the 16-bit raw range at this scale")
    Image.fromarray(raw.astype(np.uint16)).save(Path(path))


def load_intrinsics(path) -> CameraIntrinsics:
    """Parse 'fx fy cx cy' from a whitespace-separated text file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as err:
        raise FormatError(f"{path}: file not found") from err
    fields = text.split()
    if len(fields) != 4:
        raise FormatError(f"{path}: expected 4 values 'fx fy cx cy', got {len(fields)}")
    try:
        fx, fy, cx, cy = (float(v) for v in fields)
    except ValueError as err:
        raise FormatError(f"{path}: non-numeric intrinsics entry") from err
    if fx <= 0 or fy <= 0:
        raise FormatError(f"{path}: focal lengths must be positive")
    return CameraIntrinsics(fx, fy, cx, cy)


def save_intrinsics(path, intrinsics: CameraIntrinsics) -> None:
    Path(path).write_text(
        f"{intrinsics.fx!r} {intrinsics.fy!r} {intrinsics.cx!r} {intrinsics.cy!r}\n"
    )


def load_frame(paths: FramePaths, depth_scale: float = 5000.0) -> Frame:
    """Assemble a Frame from its on-disk parts."""
    intensity = load_intensity(paths.intensity)
    depth = load_depth(paths.depth, depth_scale) if paths.depth else None
    intr = load_intrinsics(paths.intrinsics) if paths.intrinsics else None
    return Frame(intensity, depth, intr)


# ---------------------------------------------------------------------------
# Quaternions and trajectory files
# ---------------------------------------------------------------------------


def quaternion_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a Hamilton quaternion ordered (qx, qy, qz, qw)."""
    x, y, z, w = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.sqrt(x * x + y * y + z * z + w * w)
    x, y, z, w = x / n, y / n, z / n, w / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R) -> np.ndarray:
    """Quaternion (qx, qy, qz, qw) of a rotation matrix, w >= 0 branch."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            x = 0.25 * s
            y = (R[0, 1] + R[1, 0]) / s
            z = (R[0, 2] + R[2, 0]) / s
            w = (R[2, 1] - R[1, 2]) / s
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            x = (R[0, 1] + R[1, 0]) / s
            y = 0.25 * s
            z = (R[1, 2] + R[2, 1]) / s
            w = (R[0, 2] - R[2, 0]) / s
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            x = (R[0, 2] + R[2, 0]) / s
            y = (R[1, 2] + R[2, 1]) / s
            z = 0.25 * s
            w = (R[1, 0] - R[0, 1]) / s
    q = np.array([x, y, z, w])
    if w < 0:
        q = -q
    return q / np.linalg.norm(q)


def load_poses_tum(path):
    """Read a trajectory file; returns a list of (timestamp, RigidTransform).

    Lines starting with '#' are comments. Quaternions must be normalized
    within 1e-6.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as err:
        raise FormatError(f"{path}: file not found") from err
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise FormatError(
                f"{path}:{lineno}: expected 8 fields "
                "'timestamp tx ty tz qx qy qz qw', got "
                f"{len(fields)}"
            )
        try:
            values = [float(v) for v in fields]
        except ValueError as err:
            raise FormatError(f"{path}:{lineno}: non-numeric field") from err
        t = values[1:4]
        q = np.asarray(values[4:8])
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise FormatError(
                f"{path}:{lineno}: quaternion norm deviates from 1 by more than 1e-6"
            )
        records.append((values[0], RigidTransform(quaternion_to_rotation(q), t)))
    return records


def save_poses_tum(path, records) -> None:
    """Write (timestamp, RigidTransform) records in trajectory format."""
    lines = []
    for timestamp, transform in records:
        q = rotation_to_quaternion(transform.rotation)
        t = transform.translation
        fields = [timestamp, t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
        lines.append(" ".join(repr(float(v)) for v in fields))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def result_to_dict(result: AlignmentResult) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "family": result.family,
        "method": result.method,
        "converged": result.converged,
        "reason": result.reason,
        "final_objective": result.final_objective,
        "estimate": result.estimate_dict(),
        "trace": [r.to_dict() for r in result.trace],
        "diagnostics": result.diagnostics,
    }


def _result_row(data: dict) -> dict:
    """Flatten a single-result dict to one CSV row."""
    return {
        "family": data["family"],
        "method": data["method"],
        "converged": data["converged"],
        "reason": data["reason"],
        "final_objective": data["final_objective"],
        "iterations": len(data["trace"]),
        "estimate": json.dumps(data["estimate"], sort_keys=True),
    }


def write_report(obj, path, fmt: str = "json") -> None:
    """Write an alignment result or batch summary to JSON or CSV.

    JSON carries the full trace at full float precision. CSV writes one
    row per pair for a batch dict with a "pairs" list, or a single row
    for one result, plus a schema_version column.
    """
    path = Path(path)
    if isinstance(obj, AlignmentResult):
        obj = result_to_dict(obj)
    if fmt == "json":
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return
    if fmt == "csv":
        pairs = obj["pairs"] if "pairs" in obj else [_result_row(obj)]
        columns = ["schema_version"]
        for row in pairs:
            for key in row:
                if key not in columns:
                    columns.append(key)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in pairs:
                out = [REPORT_SCHEMA_VERSION]
                for key in columns[1:]:
                    value = row.get(key, "")
                    if isinstance(value, float):
                        value = repr(value)
                    out.append(value)
                writer.writerow(out)
        return
    raise ValueError(f"unknown report format {fmt!r}")
