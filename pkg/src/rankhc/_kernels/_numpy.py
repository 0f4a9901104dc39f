"""Pure-numpy kernels. Reference semantics for the compiled versions."""

import numpy as np

NAME = "numpy"


def permuted_sums(cols, draws):
    """Row sums of independently shuffled columns.

    cols: (n, t) base columns (int64 or float64).
    draws: (m, t, n - 1) Fisher-Yates swap indices, see ``rng.fisher_yates_draws``.
    Returns (m, n) array; column j is added in order j = 0, ..., t - 1.
    """
    n, t = cols.shape
    m = draws.shape[0]
    arr = np.ascontiguousarray(np.broadcast_to(cols.T, (m, t, n))).copy()
    for k in range(n - 1):
        i = n - 1 - k
        idx = draws[:, :, k][..., None]
        a_i = arr[:, :, i].copy()
        arr[:, :, i] = np.take_along_axis(arr, idx, axis=2)[..., 0]
        np.put_along_axis(arr, idx, a_i[..., None], axis=2)
    out = np.zeros((m, n), dtype=cols.dtype)
    for j in range(t):
        out += arr[:, j, :]
    return out


def _v(num, npq, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den
    edge = np.where(num == 0, 0.0, np.where(num > 0, np.inf, -np.inf))
    return np.where(den > 0, ratio, edge)


def tail_max_dense(cls, npq, den):
    """max_j V_j per row, evaluating every grid index.

    cls[r, i] in [0, K] is the number of grid thresholds subject i clears, so
    N_j = #{i : cls >= j} for the 1-based grid index j.
    """
    m, n = cls.shape
    K = npq.shape[0]
    flat = (cls + (K + 1) * np.arange(m, dtype=np.int64)[:, None]).ravel()
    hist = np.bincount(flat, minlength=m * (K + 1)).reshape(m, K + 1)
    tails = np.cumsum(hist[:, ::-1], axis=1)[:, ::-1][:, 1:]
    v = _v(tails.astype(np.float64) - npq, npq, den)
    return v.max(axis=1)
