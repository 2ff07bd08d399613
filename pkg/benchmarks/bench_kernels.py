"""Time the numba kernels against the numpy fallback and check they agree.

    python3 benchmarks/bench_kernels.py [--points 2000] [--nodes 10000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from volspec import _kernels as K


def _cases(points: int, nodes: int, rng: np.random.Generator):
    n = np.arange(1, nodes + 1, dtype=float)
    t = n ** 2
    z = rng.uniform(-10, 10, points) + 1j * rng.uniform(-10, 10, points)
    x = rng.uniform(0.5, 1e4, points)
    skip = np.full(points, -1, dtype=np.int64)
    w = 2.0 * n ** 2
    return [
        ("log1m_sum", lambda b: K.log1m_sum(z, t, b)),
        ("log_abs_sign", lambda b: K.log_abs_sign(x, t, skip, b)[0]),
        ("cauchy_sum", lambda b: K.cauchy_sum(z, t, w.astype(complex), b)),
        ("cauchy_sum_real", lambda b: K.cauchy_sum_real(x, t, w, b)[0]),
    ]


def _best(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--nodes", type=int, default=10000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not K.NUMBA_AVAILABLE:
        print("numba unavailable; only the numpy path can run")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}{'max rel diff':>15}")
    for name, fn in _cases(args.points, args.nodes, rng):
        t_np, v_np = _best(lambda: fn("numpy"), args.repeat)
        if K.NUMBA_AVAILABLE:
            fn("numba")  # compile outside the timing
            t_nb, v_nb = _best(lambda: fn("numba"), args.repeat)
            d = v_nb - v_np
            if np.iscomplexobj(d):
                # logs of products agree only modulo 2*pi*i
                d = d.real + 1j * (np.angle(np.exp(1j * d.imag)))
            diff = float(np.max(np.abs(d) / np.maximum(np.abs(v_np), 1e-300)))
            print(f"{name:<18}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.1f}{diff:>15.2e}")
        else:
            print(f"{name:<18}{t_np:>12.4f}{'-':>12}{'-':>10}{'-':>15}")


if __name__ == "__main__":
    main()
