"""Central finite-difference check of the guided-attention gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vonet import guided_attention, guided_attention_grad

# Relative error denominators are floored here so entries that vanish
# analytically are judged in absolute terms.
REL_FLOOR = 1e-6


@dataclass(frozen=True)
class GradcheckResult:
    instances: int
    max_rel_error: float
    worst: tuple  # (instance index, parameter name)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def random_instance(rng: np.random.Generator, n: int | None = None, d: int | None = None):
    n = int(rng.integers(1, 5)) if n is None else n
    d = int(rng.integers(1, 4)) if d is None else d
    Q, K, V, gate, up = (rng.standard_normal((n, d)) for _ in range(5))
    alpha = float(rng.uniform(0.5, 2.0))
    return Q, K, V, gate, alpha, up


def numeric_gradients(Q, K, V, gate, alpha, upstream, h: float = 1e-5) -> dict:
    def f(Q_, K_, V_, g_, a_):
        return float(np.sum(upstream * guided_attention(Q_, K_, V_, g_, a_)))

    args = [np.array(Q, dtype=np.float64), np.array(K, dtype=np.float64),
            np.array(V, dtype=np.float64), np.array(gate, dtype=np.float64)]
    out = {}
    for name, idx in (("Q", 0), ("K", 1), ("V", 2), ("gate", 3)):
        g = np.zeros_like(args[idx])
        for pos in np.ndindex(g.shape):
            orig = args[idx][pos]
            args[idx][pos] = orig + h
            fp = f(*args, alpha)
            args[idx][pos] = orig - h
            fm = f(*args, alpha)
            args[idx][pos] = orig
            g[pos] = (fp - fm) / (2.0 * h)
        out[name] = g
    out["alpha"] = (f(*args, alpha + h) - f(*args, alpha - h)) / (2.0 * h)
    return out


def relative_error(a, b) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)
    return float(np.max(np.abs(a - b) / den))


def run_gradcheck(instances: int = 50, seed: int = 0, h: float = 1e-5) -> GradcheckResult:
    rng = np.random.Generator(np.random.PCG64(seed))
    worst_err = 0.0
    worst = (-1, "")
    for i in range(instances):
        Q, K, V, gate, alpha, up = random_instance(rng)
        ana = guided_attention_grad(Q, K, V, gate, alpha, up)
        num = numeric_gradients(Q, K, V, gate, alpha, up, h)
        for name in ("Q", "K", "V", "gate", "alpha"):
            e = relative_error(ana[name], num[name])
            if e > worst_err:
                worst_err, worst = e, (i, name)
    return GradcheckResult(instances, worst_err, worst)
