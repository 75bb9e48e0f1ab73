"""On-disk formats: KITTI pose files, IMU/GNSS CSV, PGM/PPM, motion JSON."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose
from .imu import GnssFix, PreintegratedMotion
from .trajectory import Trajectory

POSE_FILE_TOL = 1e-4
IMU_HEADER = ("t", "ax", "ay", "az", "wx", "wy", "wz")
GNSS_HEADER = ("t", "x", "y", "z", "sigma")
ALIGNED_HEADER = ("t", "x", "y", "z", "qx", "qy", "qz", "qw")


class FormatError(ValueError):
    """Malformed input file; the message names the file and the offending spot."""


def fmt(x: float) -> str:
    # 17 significant digits round-trips any float64; "+ 0.0" folds -0 into 0.
    return "%.17g" % (float(x) + 0.0)


# --------------------------------------------------------------------------
# KITTI pose files
# --------------------------------------------------------------------------


def format_pose_line(p: Pose) -> str:
    return " ".join(fmt(x) for x in p.matrix34().reshape(-1))


def write_pose_file(traj: Trajectory | Sequence[Pose], path) -> None:
    poses = traj.poses() if isinstance(traj, Trajectory) else list(traj)
    Path(path).write_text("".join(format_pose_line(p) + "\n" for p in poses))


def read_pose_file(path, timestamps=None, frame: str = "camera0", role: str = "estimate") -> Trajectory:
    """Parse a KITTI pose file (12 numbers per line, row-major ``[R | t]``).

    Timestamps default to the line index.
    """
    path = Path(path)
    poses = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 12:
            raise FormatError(f"{path}: line {lineno}: expected 12 numbers, got {len(parts)}")
        try:
            vals = np.array([float(x) for x in parts])
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric value") from None
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"{path}: line {lineno}: non-finite value")
        try:
            poses.append(Pose.from_matrix(vals.reshape(3, 4), tol=POSE_FILE_TOL))
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno} (pose index {len(poses)}): {exc}") from None
    if not poses:
        raise FormatError(f"{path}: no poses")
    ts = np.arange(len(poses), dtype=np.float64) if timestamps is None else np.asarray(timestamps, dtype=np.float64)
    if ts.shape[0] != len(poses):
        raise FormatError(f"{path}: {len(poses)} poses but {ts.shape[0]} timestamps")
    return Trajectory.from_poses(ts, poses, frame=frame, role=role)


def read_times_file(path) -> np.ndarray:
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if line.strip():
            try:
                out.append(float(line))
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: not a number") from None
    return np.array(out)


def write_times_file(times, path) -> None:
    Path(path).write_text("".join(fmt(t) + "\n" for t in times))


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(x) for x in r) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _read_csv(path, header) -> np.ndarray:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if tuple(got) != tuple(header):
            raise FormatError(f"{path}: header must be {','.join(header)}, got {','.join(got)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: non-numeric field") from None
    return np.array(rows, dtype=np.float64).reshape(-1, len(header))


def write_imu_csv(path, t, accel, gyro) -> None:
    _write_csv(path, IMU_HEADER, np.column_stack([t, accel, gyro]))


def read_imu_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = _read_csv(path, IMU_HEADER)
    if a.shape[0] > 1 and not np.all(np.diff(a[:, 0]) > 0):
        raise FormatError(f"{path}: column t: timestamps must be strictly increasing")
    return a[:, 0].copy(), a[:, 1:4].copy(), a[:, 4:7].copy()


def write_gnss_csv(path, fixes: Sequence[GnssFix]) -> None:
    _write_csv(path, GNSS_HEADER, [[f.t, *f.position, f.sigma] for f in fixes])


def read_gnss_csv(path) -> list[GnssFix]:
    a = _read_csv(path, GNSS_HEADER)
    if np.any(a[:, 4] <= 0):
        raise FormatError(f"{path}: column sigma: values must be positive")
    return [GnssFix(float(r[0]), r[1:4].copy(), float(r[4])) for r in a]


def write_aligned_csv(path, traj: Trajectory) -> None:
    q = Rotation.from_matrix(traj.rotations).as_quat()  # x, y, z, w
    q = np.where(q[:, 3:4] < 0, -q, q)
    _write_csv(path, ALIGNED_HEADER, np.column_stack([traj.timestamps, traj.translations, q]))


# --------------------------------------------------------------------------
# pre-integrated motions JSON
# --------------------------------------------------------------------------


def motions_to_dict(motions: Sequence[PreintegratedMotion], initial_velocity, gravity_compensation: bool) -> dict:
    return {
        "version": 1,
        "initial_velocity": [float(x) for x in initial_velocity],
        "gravity_compensation": bool(gravity_compensation),
        "motions": [
            {
                "t_start": m.t_start,
                "duration": m.duration,
                "delta_rotation": [float(x) for x in m.delta_rotation.reshape(-1)],
                "delta_velocity": [float(x) for x in m.delta_velocity],
                "delta_position": [float(x) for x in m.delta_position],
            }
            for m in motions
        ],
    }


def motions_from_dict(d: dict, source="motions") -> tuple[list[PreintegratedMotion], np.ndarray, bool]:
    try:
        if d.get("version") != 1:
            raise FormatError(f"{source}: field version: unsupported value {d.get('version')!r}")
        motions = [
            PreintegratedMotion(
                np.asarray(m["delta_rotation"], dtype=np.float64).reshape(3, 3),
                np.asarray(m["delta_velocity"], dtype=np.float64),
                np.asarray(m["delta_position"], dtype=np.float64),
                float(m["duration"]),
                float(m["t_start"]),
            )
            for m in d["motions"]
        ]
        v0 = np.asarray(d["initial_velocity"], dtype=np.float64).reshape(3)
        return motions, v0, bool(d.get("gravity_compensation", False))
    except KeyError as exc:
        raise FormatError(f"{source}: missing field {exc.args[0]}") from None
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# --------------------------------------------------------------------------
# binary PGM / PPM, maxval 255
# --------------------------------------------------------------------------


def write_pnm(path, img) -> None:
    """Write ``H x W`` as P5 or ``H x W x 3`` as P6; values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {img.shape} as PGM/PPM")
    H, W = img.shape[:2]
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (W, H) + data.tobytes())


def _pnm_tokens(raw: bytes, count: int, path) -> tuple[list[bytes], int]:
    tokens = []
    i = 0
    while len(tokens) < count:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError(f"{path}: truncated header")
        tokens.append(raw[i:j])
        i = j
    return tokens, i + 1  # exactly one whitespace byte before the raster


def read_pnm(path) -> np.ndarray:
    """Read binary PGM/PPM (maxval 255) as float64 in [0, 1]; grey images become 3-channel."""
    path = Path(path)
    raw = path.read_bytes()
    tokens, start = _pnm_tokens(raw, 4, path)
    magic, w, h, maxval = tokens
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r} (need binary P5/P6)")
    try:
        W, H, mv = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError(f"{path}: malformed header") from None
    if mv != 255:
        raise FormatError(f"{path}: maxval must be 255, got {mv}")
    c = 3 if magic == b"P6" else 1
    n = W * H * c
    body = raw[start : start + n]
    if len(body) != n:
        raise FormatError(f"{path}: raster has {len(body)} bytes, expected {n}")
    img = np.frombuffer(body, dtype=np.uint8).reshape(H, W, c).astype(np.float64) / 255.0
    return np.repeat(img, 3, axis=2) if c == 1 else img
