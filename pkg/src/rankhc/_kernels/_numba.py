"""Compiled kernels. Must agree bit-for-bit with ``_numpy``."""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True, nogil=True)
def permuted_sums(cols, draws):
    n, t = cols.shape
    m = draws.shape[0]
    out = np.zeros((m, n), dtype=cols.dtype)
    buf = np.empty(n, dtype=cols.dtype)
    for r in range(m):
        for j in range(t):
            for i in range(n):
                buf[i] = cols[i, j]
            for k in range(n - 1):
                i = n - 1 - k
                s = draws[r, j, k]
                tmp = buf[i]
                buf[i] = buf[s]
                buf[s] = tmp
            for i in range(n):
                out[r, i] += buf[i]
    return out


@njit(cache=True, nogil=True, inline="always")
def _v(num, den):
    if den > 0:
        return num / den
    if num == 0:
        return 0.0
    return np.inf if num > 0 else -np.inf


@njit(cache=True, nogil=True)
def tail_max_dense(cls, npq, den):
    m, n = cls.shape
    K = npq.shape[0]
    out = np.empty(m)
    hist = np.zeros(K + 1, dtype=np.int64)
    for r in range(m):
        hist[:] = 0
        for i in range(n):
            hist[cls[r, i]] += 1
        N = 0
        best = -np.inf
        for j in range(K, 0, -1):
            N += hist[j]
            v = _v(float(N) - npq[j - 1], den[j - 1])
            if v > best:
                best = v
        out[r] = best
    return out
