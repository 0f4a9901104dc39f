"""Compare the numba and numpy kernel backends on the null-tabulation hot path.

usage: python benchmarks/bench_kernels.py [--n 1000] [--t 7] [--reps 2000]
"""

import argparse
import time

import numpy as np

from rankhc import _kernels
from rankhc.calibration import identity_doubled, pooled_doubled_hist, t_samples, pq_from_doubled_hist
from rankhc.hc import make_grid
from rankhc.rng import RngSeed


def bench(backend, n, t, reps, seed):
    grid = make_grid("standard", n, t)
    cols = identity_doubled(n, t)
    t0 = time.perf_counter()
    dh = pooled_doubled_hist(cols, reps, seed.child(1), backend=backend)
    t1 = time.perf_counter()
    pq = pq_from_doubled_hist(dh, grid)
    ts = t_samples(cols, grid, pq, reps, seed.child(2), backend=backend)
    t2 = time.perf_counter()
    return t1 - t0, t2 - t1, dh, ts


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--t", type=int, default=7)
    ap.add_argument("--reps", type=int, default=2000)
    args = ap.parse_args()
    seed = RngSeed(12345)
    results = {}
    for name in _kernels.available():
        bench(name, 20, 2, 10, seed)  # warm-up / JIT compile
        results[name] = bench(name, args.n, args.t, args.reps, seed)
        a, b, _, _ = results[name]
        print(f"{name:6s}  p_q phase {a:7.3f}s   T phase {b:7.3f}s   "
              f"({args.reps} panels each, n={args.n}, t={args.t})")
    if len(results) == 2:
        (a1, b1, h1, t1), (a2, b2, h2, t2) = results["numba"], results["numpy"]
        same = np.array_equal(h1, h2) and np.array_equal(t1, t2)
        print(f"speed-up numba vs numpy: {(a2 + b2) / (a1 + b1):.1f}x; outputs identical: {same}")


if __name__ == "__main__":
    main()
