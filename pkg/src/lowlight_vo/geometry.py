"""SO(3) / SE(3) arithmetic.

Rotations are plain 3x3 float64 arrays. A :class:`Pose` bundles a rotation and
a translation; a twist is a 6-vector ``(rx, ry, rz, tx, ty, tz)`` whose first
half is an axis-angle rotation and whose second half is the translation,
copied verbatim (no screw coupling).
"""
from __future__ import annotations

import math

import numpy as np

# Inputs this close to orthonormal are projected back onto SO(3); worse ones
# are rejected.
ORTHO_TOL = 1e-6
# Below this deviation a matrix is taken as-is (keeps file round trips exact).
_EXACT_TOL = 1e-12
_SMALL_ANGLE = 1e-4


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _finite_vector(v, n: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    if not all(map(math.isfinite, a.tolist())):
        raise ValueError(f"{name} has non-finite components")
    return a


def _ortho_error(R: np.ndarray) -> tuple[float, float]:
    """``(max |R^T R - I|, det R)`` on Python floats; NaN-propagating."""
    (a, b, c), (d, e, f), (g, h, i) = R.tolist()
    dev = max(
        abs(a * a + d * d + g * g - 1.0),
        abs(b * b + e * e + h * h - 1.0),
        abs(c * c + f * f + i * i - 1.0),
        abs(a * b + d * e + g * h),
        abs(a * c + d * f + g * i),
        abs(b * c + e * f + h * i),
    )
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    return dev, det


def as_rotation(R, tol: float = ORTHO_TOL) -> np.ndarray:
    """Validate ``R`` as a rotation matrix, repairing small drift.

    Matrices within ``tol`` (max entry of ``R^T R - I``) of orthonormal are
    re-projected with a polar decomposition. Anything further off, or with a
    negative determinant, raises ``ValueError``.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    dev, det = _ortho_error(R)
    if not (dev <= tol and det > 0.0):  # NaN fails both comparisons
        if not np.all(np.isfinite(R)):
            raise ValueError("rotation has non-finite entries")
        raise ValueError(
            f"matrix is not a rotation (orthonormality error {dev:.3g}, det {det:.6g})"
        )
    if dev > _EXACT_TOL or abs(det - 1.0) > _EXACT_TOL:
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
    return R


def _rodrigues(x: float, y: float, z: float) -> np.ndarray:
    theta2 = x * x + y * y + z * z
    if theta2 < _SMALL_ANGLE * _SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        theta = math.sqrt(theta2)
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    # I + a K + b K^2, with K^2 = w w^T - |w|^2 I
    return np.array(
        [
            [1.0 - b * (y * y + z * z), b * x * y - a * z, b * x * z + a * y],
            [b * x * y + a * z, 1.0 - b * (x * x + z * z), b * y * z - a * x],
            [b * x * z - a * y, b * y * z + a * x, 1.0 - b * (x * x + y * y)],
        ]
    )


def so3_exp(w) -> np.ndarray:
    """Rodrigues exponential of an axis-angle vector."""
    return _rodrigues(*_finite_vector(w, 3, "axis-angle").tolist())


def _canonical_sign(n: np.ndarray) -> np.ndarray:
    for c in n:
        if abs(c) > 1e-12:
            return n if c > 0 else -n
    return n


def so3_log(R, tol: float = ORTHO_TOL) -> np.ndarray:
    """Axis-angle vector of ``R`` with magnitude in ``[0, pi]``.

    At exactly pi the two candidate vectors are disambiguated by making the
    first nonzero component positive.
    """
    R = as_rotation(R, tol)
    (a, b, c), (d, e, f), (g, h, i) = R.tolist()
    cos_t = min(1.0, max(-1.0, (a + e + i - 1.0) / 2.0))
    ax, ay, az = h - f, c - g, d - b  # 2 sin(theta) n
    sin_t = 0.5 * math.sqrt(ax * ax + ay * ay + az * az)
    theta = math.atan2(sin_t, cos_t)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        k = 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
        return np.array([k * ax, k * ay, k * az])
    if sin_t > 1e-3:
        k = theta / (2.0 * sin_t)
        return np.array([k * ax, k * ay, k * az])
    # Near pi: recover the axis from the symmetric part, (1 - cos) n n^T.
    axis2 = np.array([ax, ay, az])
    S = 0.5 * (R + R.T) - cos_t * np.eye(3)
    k = int(np.argmax(np.diag(S)))
    n = S[:, k] / math.sqrt(S[k, k] * (1.0 - cos_t))
    n /= np.linalg.norm(n)
    if sin_t < 1e-12:
        n = _canonical_sign(n)
    elif n @ axis2 < 0.0:
        n = -n
    return theta * n


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian: ``log(exp(phi) exp(d)) ~ phi + Jr^-1(phi) d``."""
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < _SMALL_ANGLE**2:
        c = 1.0 / 12.0 + theta2 / 720.0
    else:
        theta = math.sqrt(theta2)
        c = 1.0 / theta2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


class Pose:
    """Rigid transform ``x -> R x + t``. Treat instances as immutable."""

    __slots__ = ("R", "t")

    def __init__(self, R=None, t=None, *, tol: float = ORTHO_TOL):
        R = np.eye(3) if R is None else as_rotation(R, tol)
        t = np.zeros(3) if t is None else _finite_vector(t, 3, "translation").copy()
        R.flags.writeable = False
        t.flags.writeable = False
        self.R = R
        self.t = t

    @classmethod
    def _trusted(cls, R: np.ndarray, t: np.ndarray) -> "Pose":
        # Skips validation; for products of already-valid poses.
        p = object.__new__(cls)
        R.flags.writeable = False
        t.flags.writeable = False
        p.R = R
        p.t = t
        return p

    @classmethod
    def identity(cls) -> "Pose":
        return cls._trusted(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T, tol: float = ORTHO_TOL) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        if T.shape not in ((3, 4), (4, 4)):
            raise ValueError(f"pose matrix must be 3x4 or 4x4, got {T.shape}")
        return cls(T[:3, :3], T[:3, 3], tol=tol)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def matrix34(self) -> np.ndarray:
        return np.hstack([self.R, self.t[:, None]])

    def inverse(self) -> "Pose":
        Rt = self.R.T.copy()
        return Pose._trusted(Rt, -(Rt @ self.t))

    def act(self, x) -> np.ndarray:
        return self.R @ np.asarray(x, dtype=np.float64) + self.t

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self) -> str:
        return f"Pose(rotvec={so3_log(self.R).round(6).tolist()}, t={self.t.round(6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    return Pose._trusted(a.R @ b.R, a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def relative_pose(a: Pose, b: Pose) -> Pose:
    """``a^-1 b``: the motion from frame ``a`` to frame ``b`` expressed in ``a``."""
    Rt = a.R.T
    return Pose._trusted(Rt @ b.R, Rt @ (b.t - a.t))


def pose_from_twist(v) -> Pose:
    x, y, z, tx, ty, tz = _finite_vector(v, 6, "twist").tolist()
    return Pose._trusted(_rodrigues(x, y, z), np.array([tx, ty, tz]))


def twist_from_pose(p: Pose) -> np.ndarray:
    return np.concatenate([so3_log(p.R), p.t])


def rotation_angle(R) -> float:
    """Geodesic angle of ``R`` in radians, robust near zero."""
    R = np.asarray(R, dtype=np.float64)
    cos_t = min(1.0, max(-1.0, (np.trace(R) - 1.0) / 2.0))
    sin_t = 0.5 * np.linalg.norm(vee(R - R.T))
    return math.atan2(sin_t, cos_t)
