"""Time the compiled kernels against the numpy fallback on desk-scale inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import math
import time

import numpy as np

from tpdm_ct import _fallback

try:
    from tpdm_ct import _ckernels
except ImportError:
    _ckernels = None


def _cases(rng):
    n = 64
    vol = rng.random((n, n, n))
    angles = 2 * math.pi * np.arange(64) / 64
    origin = -(n - 1) / 2 * 0.5
    q = rng.random((64, 64, 64))
    X = rng.random((64, 64 * 64))
    D = rng.random((512, 64 * 64))
    W = rng.random((64, 512))
    return {
        "forward_project": lambda m: m.forward_project(vol, origin, origin, origin, 0.5, angles, 100.0, 200.0,
                                                       64, 64, 1.2, 0.25, 1),
        "backproject": lambda m: m.backproject(q, origin, origin, origin, 0.5, n, n, n, angles, 100.0, 0.6, 1),
        "sq_distances": lambda m: m.sq_distances(X, D, 1),
        "pairwise_dot": lambda m: m.pairwise_dot(X, D, 1),
        "weighted_sum": lambda m: m.weighted_sum(W, D, 1),
    }


def _time(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<16} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in cases.items():
        tp, ref = _time(lambda: fn(_fallback), args.repeat)
        if _ckernels is None:
            print(f"{name:<16} {tp:>10.4f} {'n/a':>10}")
            continue
        tc, out = _time(lambda: fn(_ckernels), args.repeat)
        diff = float(np.max(np.abs(np.asarray(out) - np.asarray(ref))))
        print(f"{name:<16} {tp:>10.4f} {tc:>10.4f} {tp / tc:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
