"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature. Which one the
public names point to is decided once at import time:

* ``LOWLIGHT_VO_NUMBA=0`` (or ``false``/``off``) forces the numpy path;
* otherwise numba is used if it imports.

Both variants stay importable (``*_numba`` / ``*_numpy``) so tests and the
benchmark can compare them directly.
"""
from __future__ import annotations

import math
import os

import numpy as np

ENV_FLAG = "LOWLIGHT_VO_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _numba_requested()


# --------------------------------------------------------------------------
# IMU pre-integration recursion
# --------------------------------------------------------------------------


def _preintegrate_loop(t, acc, gyr):
    # Scalar loop, written so numba can compile it unchanged.
    n = t.shape[0]
    R = np.eye(3)
    v = np.zeros(3)
    p = np.zeros(3)
    Rn = np.empty((3, 3))
    ra = np.empty(3)
    for k in range(n - 1):
        dt = t[k + 1] - t[k]
        for r in range(3):
            ra[r] = R[r, 0] * acc[k, 0] + R[r, 1] * acc[k, 1] + R[r, 2] * acc[k, 2]
        for r in range(3):
            p[r] = p[r] + v[r] * dt + 0.5 * ra[r] * dt * dt
            v[r] = v[r] + ra[r] * dt
        wx = gyr[k, 0] * dt
        wy = gyr[k, 1] * dt
        wz = gyr[k, 2] * dt
        th2 = wx * wx + wy * wy + wz * wz
        th = math.sqrt(th2)
        if th < 1e-4:
            a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0
            b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0
        else:
            a = math.sin(th) / th
            b = (1.0 - math.cos(th)) / th2
        # E = I + a K + b K^2, K = skew(w dt)
        e00 = 1.0 - b * (wy * wy + wz * wz)
        e11 = 1.0 - b * (wx * wx + wz * wz)
        e22 = 1.0 - b * (wx * wx + wy * wy)
        e01 = -a * wz + b * wx * wy
        e10 = a * wz + b * wx * wy
        e02 = a * wy + b * wx * wz
        e20 = -a * wy + b * wx * wz
        e12 = -a * wx + b * wy * wz
        e21 = a * wx + b * wy * wz
        for r in range(3):
            r0 = R[r, 0]
            r1 = R[r, 1]
            r2 = R[r, 2]
            Rn[r, 0] = r0 * e00 + r1 * e10 + r2 * e20
            Rn[r, 1] = r0 * e01 + r1 * e11 + r2 * e21
            Rn[r, 2] = r0 * e02 + r1 * e12 + r2 * e22
        R[:, :] = Rn
    return R, v, p


def _batch_so3_exp(w: np.ndarray) -> np.ndarray:
    th2 = np.einsum("ij,ij->i", w, w)
    th = np.sqrt(th2)
    small = th < 1e-4
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th2 / 6.0 + th2 * th2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = np.zeros((w.shape[0], 3, 3))
    K[:, 0, 1] = -w[:, 2]
    K[:, 0, 2] = w[:, 1]
    K[:, 1, 0] = w[:, 2]
    K[:, 1, 2] = -w[:, 0]
    K[:, 2, 0] = -w[:, 1]
    K[:, 2, 1] = w[:, 0]
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


def preintegrate_numpy(t, acc, gyr):
    """Vectorised recursion: only the rotation product stays sequential."""
    t = np.ascontiguousarray(t, dtype=np.float64)
    acc = np.ascontiguousarray(acc, dtype=np.float64)
    gyr = np.ascontiguousarray(gyr, dtype=np.float64)
    n = t.shape[0]
    dt = np.diff(t)
    steps = _batch_so3_exp(gyr[: n - 1] * dt[:, None])
    Rs = np.empty((n, 3, 3))
    Rs[0] = np.eye(3)
    for k in range(n - 1):
        Rs[k + 1] = Rs[k] @ steps[k]
    ra = np.einsum("kij,kj->ki", Rs[: n - 1], acc[: n - 1])
    dv = ra * dt[:, None]
    v = np.vstack([np.zeros(3), np.cumsum(dv, axis=0)])
    dp = v[: n - 1] * dt[:, None] + 0.5 * ra * (dt * dt)[:, None]
    # cumsum, not sum: sequential order matches the scalar recursion.
    p = np.cumsum(dp, axis=0)[-1] if n > 1 else np.zeros(3)
    return Rs[-1].copy(), v[-1].copy(), p


# --------------------------------------------------------------------------
# 2-D depth-wise convolution, "same" padding, cross-correlation convention
# --------------------------------------------------------------------------


def _depthwise_loop(x, k, bias):
    H, W, C = x.shape
    kh = k.shape[1]
    kw = k.shape[2]
    ph = kh // 2
    pw = kw // 2
    out = np.empty((H, W, C))
    for c in range(C):
        for i in range(H):
            for j in range(W):
                s = bias[c]
                for di in range(kh):
                    ii = i + di - ph
                    if ii < 0 or ii >= H:
                        continue
                    for dj in range(kw):
                        jj = j + dj - pw
                        if jj < 0 or jj >= W:
                            continue
                        s += x[ii, jj, c] * k[c, di, dj]
                out[i, j, c] = s
    return out


def depthwise_conv_numpy(x, k, bias):
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    H, W, C = x.shape
    kh, kw = k.shape[1], k.shape[2]
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((H + 2 * ph, W + 2 * pw, C))
    xp[ph : ph + H, pw : pw + W] = x
    out = np.broadcast_to(np.asarray(bias, dtype=np.float64), (H, W, C)).copy()
    for di in range(kh):
        for dj in range(kw):
            out += xp[di : di + H, dj : dj + W] * k[:, di, dj]
    return out


if HAVE_NUMBA:
    preintegrate_numba = numba.njit(cache=True)(_preintegrate_loop)
    _depthwise_jit = numba.njit(cache=True)(_depthwise_loop)

    def depthwise_conv_numba(x, k, bias):
        return _depthwise_jit(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(k, dtype=np.float64),
            np.ascontiguousarray(bias, dtype=np.float64),
        )

    def _preintegrate_numba_entry(t, acc, gyr):
        return preintegrate_numba(
            np.ascontiguousarray(t, dtype=np.float64),
            np.ascontiguousarray(acc, dtype=np.float64),
            np.ascontiguousarray(gyr, dtype=np.float64),
        )
else:  # pragma: no cover
    preintegrate_numba = None
    depthwise_conv_numba = None
    _preintegrate_numba_entry = None

if USE_NUMBA:
    preintegrate_kernel = _preintegrate_numba_entry
    depthwise_conv = depthwise_conv_numba
else:
    preintegrate_kernel = preintegrate_numpy
    depthwise_conv = depthwise_conv_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
