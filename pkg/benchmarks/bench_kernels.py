"""Time the numba and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from lowlight_vo import _kernels


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--size", type=int, default=224)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    t = np.arange(args.samples) * 0.005
    acc = rng.standard_normal((args.samples, 3))
    gyr = rng.standard_normal((args.samples, 3))
    x = rng.standard_normal((args.size, args.size, 8))
    k = rng.standard_normal((8, 9, 9))
    b = rng.standard_normal(8)

    cases = {
        f"preintegrate ({args.samples} samples)": (
            lambda: _kernels.preintegrate_numpy(t, acc, gyr),
            (lambda: _kernels._preintegrate_numba_entry(t, acc, gyr)) if _kernels.HAVE_NUMBA else None,
        ),
        f"depthwise 9x9 ({args.size}x{args.size}x8)": (
            lambda: _kernels.depthwise_conv_numpy(x, k, b),
            (lambda: _kernels.depthwise_conv_numba(x, k, b)) if _kernels.HAVE_NUMBA else None,
        ),
    }
    print(f"{'kernel':<36}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, (np_fn, nb_fn) in cases.items():
        t_np = best_of(np_fn, args.repeat)
        if nb_fn is None:
            print(f"{name:<36}{t_np * 1e3:>10.2f}ms{'n/a':>12}{'':>10}")
            continue
        nb_fn()  # compile outside the timing
        t_nb = best_of(nb_fn, args.repeat)
        print(f"{name:<36}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
