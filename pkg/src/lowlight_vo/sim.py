"""Synthetic scenarios: analytic ground truth, IMU, drifting VO, GNSS, frames.

All trajectories are planar and start at the identity pose heading along +x.
Random draws use numpy's PCG64 bit generator seeded with ``[seed, stream]``,
one stream per sensor, so every generator is a pure function of the config.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, compose, pose_from_twist, relative_pose, so3_log
from .imu import GRAVITY, GnssFix, ImuSample
from .trajectory import Trajectory

KINDS = ("line", "circle", "figure-eight")

_STREAM_IMU = 1
_STREAM_VO = 2
_STREAM_GNSS = 3
_STREAM_FRAMES = 4


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "circle"
    duration: float = 60.0
    imu_rate: float = 200.0
    keyframe_rate: float = 1.0
    speed: float = 1.0  # line / circle, m/s
    radius: float = 10.0  # circle
    eight_size: float = 20.0  # figure-eight half-width; one lap per duration
    vo_sigma_trans: float = 0.0  # m per step
    vo_sigma_rot: float = 0.0  # rad per step
    vo_drift: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)  # twist added every step
    imu_sigma_accel: float = 0.0
    imu_sigma_gyro: float = 0.0
    gnss_rate: float = 1.0
    gnss_sigma: float = 0.01  # declared fix sigma
    gnss_noise: float = 0.0  # actual noise std on generated fixes
    brightness: float = 1.0
    frame_size: tuple = (32, 32)
    pixels_per_meter: float = 2.0
    gravity_compensation: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not (self.duration > 0 and self.imu_rate > 0 and self.keyframe_rate > 0 and self.gnss_rate > 0):
            raise ValueError("duration and all rates must be positive")
        if self.imu_rate < self.keyframe_rate:
            raise ValueError("IMU rate must be at least the keyframe rate")
        ratio = self.imu_rate / self.keyframe_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("IMU rate must be an integer multiple of the keyframe rate")
        if not 0.0 <= self.brightness <= 1.0:
            raise ValueError("brightness must lie in [0, 1]")
        if len(self.vo_drift) != 6:
            raise ValueError("vo_drift must have 6 components")
        object.__setattr__(self, "vo_drift", tuple(float(x) for x in self.vo_drift))
        object.__setattr__(self, "frame_size", tuple(int(x) for x in self.frame_size))

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64([self.seed, stream]))

    def keyframe_times(self) -> np.ndarray:
        n = int(math.floor(self.duration * self.keyframe_rate + 1e-9))
        return np.arange(n + 1) / self.keyframe_rate

    def imu_times(self) -> np.ndarray:
        step = int(round(self.imu_rate / self.keyframe_rate))
        n = (len(self.keyframe_times()) - 1) * step
        return np.arange(n + 1) / self.imu_rate


@dataclass(frozen=True)
class ImuSeries:
    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    initial_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __len__(self) -> int:
        return self.t.shape[0]

    def samples(self) -> list[ImuSample]:
        return [ImuSample(float(t), a, w) for t, a, w in zip(self.t, self.accel, self.gyro)]


# --------------------------------------------------------------------------
# Analytic kinematics
# --------------------------------------------------------------------------


def _raw_kinematics(cfg: ScenarioConfig, t: np.ndarray):
    t = np.asarray(t, dtype=np.float64)
    z = np.zeros_like(t)
    if cfg.kind == "line":
        return np.column_stack([cfg.speed * t, z, z]), z
    if cfg.kind == "circle":
        th = cfg.speed * t / cfg.radius
        r = cfg.radius
        return np.column_stack([r * np.sin(th), r * (1.0 - np.cos(th)), z]), th
    w = 2.0 * math.pi / cfg.duration
    A = cfg.eight_size
    pos = np.column_stack([A * np.sin(w * t), 0.5 * A * np.sin(2.0 * w * t), z])
    yaw = np.arctan2(A * w * np.cos(2.0 * w * t), A * w * np.cos(w * t))
    return pos, yaw


def speed_profile(cfg: ScenarioConfig, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if cfg.kind in ("line", "circle"):
        return np.full_like(t, abs(cfg.speed))
    w = 2.0 * math.pi / cfg.duration
    return cfg.eight_size * w * np.sqrt(np.cos(w * t) ** 2 + np.cos(2.0 * w * t) ** 2)


def path_length(cfg: ScenarioConfig, t: float, panels: int = 512) -> float:
    """Distance travelled along the analytic path up to time ``t``."""
    if cfg.kind in ("line", "circle"):
        return abs(cfg.speed) * t
    x, wts = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(0.0, t, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = mid[:, None] + half[:, None] * x[None, :]
    return float(np.sum(half[:, None] * wts[None, :] * speed_profile(cfg, nodes)))


def _rz(yaw: np.ndarray) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.zeros(yaw.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1.0
    return R


def sample_poses(cfg: ScenarioConfig, t) -> tuple[np.ndarray, np.ndarray]:
    """Rotations ``(N,3,3)`` and positions ``(N,3)`` relative to the start pose."""
    pos, yaw = _raw_kinematics(cfg, t)
    p0, y0 = _raw_kinematics(cfg, np.zeros(1))
    R0t = _rz(y0)[0].T
    return _rz(yaw - y0[0]), (pos - p0) @ R0t.T


def gen_ground_truth(cfg: ScenarioConfig, times=None) -> Trajectory:
    """Ground-truth poses at keyframe rate (or at ``times`` when given)."""
    t = cfg.keyframe_times() if times is None else np.asarray(times, dtype=np.float64)
    Rs, ps = sample_poses(cfg, t)
    return Trajectory(t, Rs, ps, frame="world", role="groundtruth")


def dense_ground_truth(cfg: ScenarioConfig) -> Trajectory:
    return gen_ground_truth(cfg, cfg.imu_times())


# --------------------------------------------------------------------------
# Sensors
# --------------------------------------------------------------------------


def gen_imu(cfg: ScenarioConfig) -> ImuSeries:
    """Body-frame IMU readings at ``cfg.imu_rate`` consistent with the recursion.

    Gyro is ``log(R_k^T R_{k+1}) / dt``. Accel is the half-step-centred second
    difference ``(p_{k+2} - p_{k+1} - p_k + p_{k-1}) / (2 dt^2)`` rotated into
    the body frame; with the matching initial velocity this makes noiseless
    integration reproduce the sampled positions to O(dt^2) over any horizon.
    """
    t = cfg.imu_times()
    dt = 1.0 / cfg.imu_rate
    n = t.shape[0]
    tp = np.concatenate([[t[0] - dt], t, [t[-1] + dt, t[-1] + 2 * dt]])
    Rs, ps = sample_poses(cfg, tp)
    # index k in padded arrays is sample k-1
    P = ps
    world_acc = (P[3:] - P[2:-1] - P[1:-2] + P[:-3]) / (2.0 * dt * dt)  # samples 0..n-1
    R = Rs[1 : n + 1]
    if cfg.gravity_compensation:
        world_acc = world_acc - GRAVITY
    acc = np.einsum("kji,kj->ki", R, world_acc)
    gyr = np.array([so3_log(Rs[k + 1].T @ Rs[k + 2]) / dt for k in range(n)])
    d0 = (P[2] - P[1]) / dt
    alpha0 = (P[3] - P[2] - P[1] + P[0]) / (2.0 * dt * dt)
    v0 = d0 - 0.5 * alpha0 * dt
    if cfg.imu_sigma_accel > 0 or cfg.imu_sigma_gyro > 0:
        rng = cfg.rng(_STREAM_IMU)
        acc = acc + cfg.imu_sigma_accel * rng.standard_normal(acc.shape)
        gyr = gyr + cfg.imu_sigma_gyro * rng.standard_normal(gyr.shape)
    return ImuSeries(t, acc, gyr, v0)


def gen_vo(gt: Trajectory, cfg: ScenarioConfig) -> list[Pose]:
    """Per-step relative motions ``true_k * exp(drift + noise)``."""
    if len(gt) < 2:
        raise ValueError("need at least 2 ground-truth poses")
    rng = cfg.rng(_STREAM_VO)
    drift = np.asarray(cfg.vo_drift, dtype=np.float64)
    sigma = np.array([cfg.vo_sigma_rot] * 3 + [cfg.vo_sigma_trans] * 3)
    noise = rng.standard_normal((len(gt) - 1, 6)) * sigma
    out = []
    for k in range(len(gt) - 1):
        rel = relative_pose(gt[k], gt[k + 1])
        out.append(compose(rel, pose_from_twist(drift + noise[k])))
    return out


def chain_motions(motions, start: Pose | None = None) -> list[Pose]:
    poses = [Pose.identity() if start is None else start]
    for m in motions:
        poses.append(compose(poses[-1], m))
    return poses


def gen_gnss(cfg: ScenarioConfig) -> list[GnssFix]:
    n = int(math.floor(cfg.duration * cfg.gnss_rate + 1e-9))
    t = np.arange(n + 1) / cfg.gnss_rate
    _, ps = sample_poses(cfg, t)
    if cfg.gnss_noise > 0:
        ps = ps + cfg.gnss_noise * cfg.rng(_STREAM_GNSS).standard_normal(ps.shape)
    return [GnssFix(float(ti), p, cfg.gnss_sigma) for ti, p in zip(t, ps)]


# --------------------------------------------------------------------------
# Frames
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Texture:
    freq: np.ndarray  # (2,) spatial frequency of the gradient ripple
    centers: np.ndarray  # (K, 2)
    widths: np.ndarray  # (K,)
    amps: np.ndarray  # (K,)
    tint: np.ndarray  # (3,)

    def __call__(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        base = 0.5 + 0.15 * np.sin(2.0 * math.pi * (self.freq[0] * u + self.freq[1] * v))
        du = u[..., None] - self.centers[:, 0]
        dv = v[..., None] - self.centers[:, 1]
        blobs = np.sum(self.amps * np.exp(-(du * du + dv * dv) / (2.0 * self.widths**2)), axis=-1)
        gray = np.clip(base + blobs, 0.0, 1.0)
        return gray[..., None] * self.tint


def _texture(cfg: ScenarioConfig) -> _Texture:
    rng = cfg.rng(_STREAM_FRAMES)
    k = 64
    extent = max(cfg.radius, cfg.eight_size, cfg.speed * cfg.duration, 10.0) + 20.0
    return _Texture(
        freq=rng.uniform(0.02, 0.1, 2),
        centers=rng.uniform(-extent, extent, (k, 2)),
        widths=rng.uniform(1.5, 6.0, k),
        amps=rng.uniform(-0.3, 0.3, k),
        tint=rng.uniform(0.85, 1.0, 3),
    )


def render_frame(cfg: ScenarioConfig, pose: Pose, texture: _Texture | None = None) -> np.ndarray:
    """Top-down view of the textured ground plane from ``pose``, ``H x W x 3`` in [0, 1]."""
    tex = _texture(cfg) if texture is None else texture
    H, W = cfg.frame_size
    jj, ii = np.meshgrid(np.arange(W) - 0.5 * (W - 1), np.arange(H) - 0.5 * (H - 1))
    local = np.stack([jj / cfg.pixels_per_meter, -ii / cfg.pixels_per_meter], axis=-1)
    R2 = pose.R[:2, :2]
    world = local @ R2.T + pose.t[:2]
    return cfg.brightness * tex(world[..., 0], world[..., 1])


def gen_frames(gt: Trajectory, cfg: ScenarioConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Consecutive frame pairs, one per keyframe step."""
    tex = _texture(cfg)
    frames = [render_frame(cfg, p, tex) for p in gt]
    return list(zip(frames[:-1], frames[1:]))
