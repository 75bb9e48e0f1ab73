"""IMU pre-integration and GNSS position correction.

The recursion over consecutive samples ``k -> k+1`` (left-endpoint hold)::

    dR <- dR exp(w_k dt)
    dv <- dv + dR a_k dt
    dp <- dp + dv dt + 0.5 dR a_k dt^2

There is no gravity or bias term inside the deltas. When
``gravity_compensation`` is on, gravity is added back while chaining deltas
into the world frame, and accelerometer readings are treated as specific
force.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .geometry import Pose, as_rotation
from .trajectory import Trajectory

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: np.ndarray
    gyro: np.ndarray


@dataclass(frozen=True)
class PreintegratedMotion:
    delta_rotation: np.ndarray
    delta_velocity: np.ndarray
    delta_position: np.ndarray
    duration: float
    t_start: float = 0.0

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        object.__setattr__(self, "delta_rotation", as_rotation(self.delta_rotation))
        object.__setattr__(self, "delta_velocity", np.asarray(self.delta_velocity, dtype=np.float64))
        object.__setattr__(self, "delta_position", np.asarray(self.delta_position, dtype=np.float64))

    @classmethod
    def identity(cls, t_start: float = 0.0) -> "PreintegratedMotion":
        return cls(np.eye(3), np.zeros(3), np.zeros(3), 0.0, t_start)

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration


@dataclass(frozen=True)
class GnssFix:
    t: float
    position: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("GNSS sigma must be positive")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))


def samples_to_arrays(samples: Sequence[ImuSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.array([s.t for s in samples], dtype=np.float64)
    acc = np.array([s.accel for s in samples], dtype=np.float64).reshape(-1, 3)
    gyr = np.array([s.gyro for s in samples], dtype=np.float64).reshape(-1, 3)
    return t, acc, gyr


def preintegrate_arrays(t, acc, gyr) -> PreintegratedMotion:
    t = np.asarray(t, dtype=np.float64)
    acc = np.asarray(acc, dtype=np.float64)
    gyr = np.asarray(gyr, dtype=np.float64)
    if t.ndim != 1 or t.shape[0] < 2:
        raise ValueError("pre-integration needs at least 2 samples")
    if acc.shape != (t.shape[0], 3) or gyr.shape != (t.shape[0], 3):
        raise ValueError("accel/gyro arrays must be (N, 3) matching the timestamps")
    if not np.all(np.diff(t) > 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    if not (np.all(np.isfinite(acc)) and np.all(np.isfinite(gyr)) and np.all(np.isfinite(t))):
        raise ValueError("IMU samples contain non-finite values")
    R, v, p = _kernels.preintegrate_kernel(t, acc, gyr)
    return PreintegratedMotion(R, v, p, float(t[-1] - t[0]), float(t[0]))


def preintegrate(samples: Sequence[ImuSample]) -> PreintegratedMotion:
    """Accumulate ``dR, dv, dp`` over an ordered sample list.

    The last sample only closes the final interval; its readings are unused.
    """
    if len(samples) < 2:
        raise ValueError("pre-integration needs at least 2 samples")
    return preintegrate_arrays(*samples_to_arrays(samples))


def compose_preintegrated(a: PreintegratedMotion, b: PreintegratedMotion) -> PreintegratedMotion:
    """Delta for ``a`` followed by ``b``."""
    R = a.delta_rotation @ b.delta_rotation
    v = a.delta_velocity + a.delta_rotation @ b.delta_velocity
    p = a.delta_position + a.delta_velocity * b.duration + a.delta_rotation @ b.delta_position
    return PreintegratedMotion(R, v, p, a.duration + b.duration, a.t_start)


def preintegrate_between(
    t, acc, gyr, keyframe_times: Sequence[float], atol: float = 1e-9
) -> list[PreintegratedMotion]:
    """One :class:`PreintegratedMotion` per consecutive keyframe pair.

    Each keyframe time must coincide (within ``atol``) with a sample
    timestamp; the boundary sample is shared by both neighbouring intervals.
    """
    t = np.asarray(t, dtype=np.float64)
    kf = np.asarray(keyframe_times, dtype=np.float64)
    idx = np.searchsorted(t, kf - atol)
    if np.any(idx >= t.shape[0]) or np.any(np.abs(t[np.minimum(idx, t.shape[0] - 1)] - kf) > atol):
        raise ValueError("every keyframe time must match an IMU sample timestamp")
    out = []
    for a, b in zip(idx[:-1], idx[1:]):
        if b <= a:
            raise ValueError("keyframe times must be strictly increasing")
        out.append(preintegrate_arrays(t[a : b + 1], acc[a : b + 1], gyr[a : b + 1]))
    return out


def chain_to_world(
    deltas: Sequence[PreintegratedMotion],
    initial_pose: Pose | None = None,
    initial_velocity=None,
    *,
    gravity_compensation: bool = False,
    t0: float | None = None,
) -> Trajectory:
    """Compose deltas onto an initial state, giving world-frame poses.

    The returned trajectory has ``len(deltas) + 1`` poses; the first is the
    initial pose.
    """
    pose = Pose.identity() if initial_pose is None else initial_pose
    R = np.array(pose.R)
    p = np.array(pose.t)
    v = np.zeros(3) if initial_velocity is None else np.asarray(initial_velocity, dtype=np.float64)
    if t0 is None:
        t0 = deltas[0].t_start if deltas else 0.0
    times = [t0]
    Rs = [R]
    ps = [p]
    t = t0
    g = GRAVITY if gravity_compensation else np.zeros(3)
    for d in deltas:
        T = d.duration
        p = p + v * T + R @ d.delta_position + 0.5 * g * T * T
        v = v + R @ d.delta_velocity + g * T
        R = R @ d.delta_rotation
        t = t + T
        times.append(t)
        Rs.append(R)
        ps.append(p)
    return Trajectory(np.array(times), np.array(Rs), np.array(ps), frame="world", role="imu")


def apply_gnss_correction(
    traj: Trajectory,
    fixes: Sequence[GnssFix],
    drift_rate: float = 0.1,
    span_tol: float = 1e-9,
) -> Trajectory:
    """Pull positions toward GNSS fixes with a variance-weighted blend.

    At the pose nearest each fix the correction is ``beta (p_gnss - p)`` with
    ``beta = s^2 / (s^2 + sigma^2)``, where ``s = drift_rate * (time since the
    previous fix)`` (the first fix counts from the start of ``traj``).
    Corrections are linearly interpolated in time between fixes, ramp from
    zero at the trajectory start, and are held after the last fix.
    Rotations are untouched.
    """
    ts = traj.timestamps
    t_lo, t_hi = ts[0] - span_tol, ts[-1] + span_tol
    usable = []
    for f in sorted(fixes, key=lambda f: f.t):
        if f.t < t_lo or f.t > t_hi:
            warnings.warn(f"GNSS fix at t={f.t} lies outside the trajectory span; ignored")
            continue
        usable.append(f)
    if not usable:
        return traj

    pos = traj.positions
    anchor_t = [ts[0]]
    anchor_c = [np.zeros(3)]
    t_prev = ts[0]
    for f in usable:
        k = int(np.argmin(np.abs(ts - f.t)))
        s2 = (drift_rate * (f.t - t_prev)) ** 2
        beta = s2 / (s2 + f.sigma**2) if s2 > 0 else 0.0
        c = beta * (f.position - pos[k])
        if ts[k] == anchor_t[-1]:
            anchor_c[-1] = c
        else:
            anchor_t.append(ts[k])
            anchor_c.append(c)
        t_prev = f.t
    anchor_t = np.array(anchor_t)
    anchor_c = np.array(anchor_c)
    shift = np.column_stack([np.interp(ts, anchor_t, anchor_c[:, i]) for i in range(3)])
    return traj.with_translations(pos + shift)
