"""Trajectory alignment and error metrics (ATE, RPE, per-segment t_rel/r_rel)."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, relative_pose, rotation_angle
from .trajectory import Trajectory

DEFAULT_SEGMENTS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


class DegenerateInputError(ValueError):
    """Too few or collinear points to determine an alignment."""


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    rmse_before: float
    rmse_after: float

    def apply(self, traj: Trajectory) -> Trajectory:
        Rs = np.einsum("ij,njk->nik", self.rotation, traj.rotations)
        ps = self.scale * traj.translations @ self.rotation.T + self.translation
        return Trajectory(traj.timestamps, Rs, ps, traj.frame, traj.role)


@dataclass(frozen=True)
class SegmentErrors:
    t_rel: float  # percent
    r_rel: float  # deg / 100 m
    n_segments: int
    per_length: dict = field(default_factory=dict)


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-timestamp matching; each gt index is used at most once."""
    tg = gt.timestamps
    j = np.clip(np.searchsorted(tg, est.timestamps), 1, max(len(tg) - 1, 1))
    left = np.maximum(j - 1, 0)
    right = np.minimum(j, len(tg) - 1)
    pick = np.where(
        np.abs(tg[left] - est.timestamps) <= np.abs(tg[right] - est.timestamps), left, right
    )
    ok = np.abs(tg[pick] - est.timestamps) <= max_dt
    ei = np.nonzero(ok)[0]
    gi = pick[ok]
    _, first = np.unique(gi, return_index=True)
    first.sort()
    return ei[first], gi[first]


def _check_pair(est: Trajectory, gt: Trajectory) -> None:
    if len(est) != len(gt):
        raise ValueError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")


def _umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool):
    # Minimise sum ||dst - (s R src + t)||^2.
    n = src.shape[0]
    if n < 3:
        raise DegenerateInputError("alignment needs at least 3 non-collinear points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    sv = np.linalg.svd(xd, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateInputError("alignment needs at least 3 non-collinear points")
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_s = np.sum(xs * xs) / n
        s = float(np.trace(np.diag(D) @ S) / var_s)
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return R, t, s


def umeyama_align(
    est: Trajectory, gt: Trajectory, with_scale: bool = True, max_dt: float = 0.02
) -> AlignmentResult:
    """Least-squares similarity (or rigid, if ``with_scale`` is off) mapping est onto gt."""
    ei, gi = associate(est, gt, max_dt)
    src = est.positions[ei]
    dst = gt.positions[gi]
    R, t, s = _umeyama(src, dst, with_scale)
    before = float(np.sqrt(np.mean(np.sum((dst - src) ** 2, axis=1))))
    moved = s * src @ R.T + t
    after = float(np.sqrt(np.mean(np.sum((dst - moved) ** 2, axis=1))))
    return AlignmentResult(R, t, s, before, after)


def ate(est: Trajectory, gt: Trajectory, align: bool = False, with_scale: bool = True) -> float:
    """Translation RMSE in meters, optionally after Umeyama alignment."""
    _check_pair(est, gt)
    p = est.positions
    if align:
        res = umeyama_align(est, gt, with_scale)
        p = res.scale * p @ res.rotation.T + res.translation
    d = gt.positions - p
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def _error_transform(gt_a: Pose, gt_b: Pose, est_a: Pose, est_b: Pose) -> Pose:
    return relative_pose(relative_pose(gt_a, gt_b), relative_pose(est_a, est_b))


def rpe(est: Trajectory, gt: Trajectory, delta: int = 1) -> tuple[float, float]:
    """Translational (m) and rotational (rad) RMSE of ``delta``-step error transforms."""
    _check_pair(est, gt)
    if delta < 1 or len(gt) < delta + 1:
        raise ValueError(f"need at least delta+1 = {delta + 1} poses")
    te = []
    re = []
    for i in range(len(gt) - delta):
        E = _error_transform(gt[i], gt[i + delta], est[i], est[i + delta])
        te.append(E.t @ E.t)
        re.append(rotation_angle(E.R) ** 2)
    return float(math.sqrt(np.mean(te))), float(math.sqrt(np.mean(re)))


def segment_errors(
    est: Trajectory,
    gt: Trajectory,
    lengths=DEFAULT_SEGMENTS,
    rtol: float = 1e-9,
) -> SegmentErrors:
    """KITTI-style relative errors over path segments of fixed gt length.

    Every frame is a start candidate; a segment of length ``L`` ends at the
    first frame whose along-path gt distance from the start reaches ``L``.
    Returns ``t_rel`` in percent and ``r_rel`` in degrees per 100 m, averaged
    over all segments of all lengths.
    """
    _check_pair(est, gt)
    dist = gt.path_length()
    t_all = []
    r_all = []
    per_length = {}
    for L in lengths:
        ends = np.searchsorted(dist, dist + L * (1.0 - rtol), side="left")
        t_l = []
        r_l = []
        for i, j in enumerate(ends):
            if j >= len(gt):
                break
            E = _error_transform(gt[i], gt[j], est[i], est[j])
            t_l.append(np.linalg.norm(E.t) / L)
            r_l.append(rotation_angle(E.R) / L)
        if t_l:
            per_length[float(L)] = (100.0 * float(np.mean(t_l)), 100.0 * math.degrees(float(np.mean(r_l))))
            t_all.extend(t_l)
            r_all.extend(r_l)
    if not t_all:
        warnings.warn("ground-truth path is shorter than every segment length")
        return SegmentErrors(float("nan"), float("nan"), 0, {})
    return SegmentErrors(
        100.0 * float(np.mean(t_all)),
        100.0 * math.degrees(float(np.mean(r_all))),
        len(t_all),
        per_length,
    )
