"""Benchmark tests: distribution-aware HC on subject means, Friedman, raw permutation HC."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

from . import _kernels
from .calibration import (TestResult, chunk_sizes, check_budget, map_chunks, p_value_mc,
                          panel_sums)
from .data import ObservationMatrix
from .hc import arithmetic_classes, default_k, knot_max, _smallest_multiple_at_least
from .ranking import RANDOM_TIES, compute_ranks
from .rng import ORACLE_NULL, PERMUTE, PQ_PHASE, TNULL_PHASE, RngSeed, as_seed

METHOD_DIST_HC = "dist-hc"
METHOD_FRIEDMAN = "friedman"
METHOD_PERM_HC = "perm-hc"

FAMILIES = ("normal", "cauchy", "exponential", "uniform")


@dataclass(frozen=True)
class OracleNullSpec:
    """Known null law of every observation.

    For ``cauchy`` mu0 is the location (median) and sigma0 the scale; otherwise
    they are the mean and standard deviation.
    """

    family: str = "normal"
    mu0: float = 0.0
    sigma0: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        f, mu, s = self.family, self.mu0, self.sigma0
        if f == "normal":
            return rng.normal(mu, s, size)
        if f == "cauchy":
            return mu + s * rng.standard_cauchy(size)
        if f == "exponential":
            # mean = sd = 1/rate; shift so the mean is mu0
            return (mu - s) + rng.exponential(s, size)
        half = math.sqrt(3.0) * s
        return rng.uniform(mu - half, mu + half, size)

    def mean_tail(self, thr: np.ndarray, t: int) -> np.ndarray:
        """w = P0((Y - mu0)/sigma0 >= thr) for a subject mean Y of t observations."""
        thr = np.asarray(thr, dtype=np.float64)
        if self.family == "normal":
            return special.ndtr(-math.sqrt(t) * thr)
        if self.family == "cauchy":
            return 0.5 - np.arctan(thr) / math.pi
        if self.family == "exponential":
            return special.gammaincc(t, np.maximum(t * (1.0 + thr), 0.0))
        return stats.irwinhall(t).sf(t * (0.5 + thr / (2.0 * math.sqrt(3.0))))


def _top_t_mean(x: np.ndarray, t: int) -> np.ndarray:
    """M(X): average of the t largest entries of each panel (last two axes)."""
    flat = x.reshape(x.shape[:-2] + (-1,))
    return np.sort(flat, axis=-1)[..., -t:].mean(axis=-1)


def _grid_last(cap, k: int) -> np.ndarray:
    cap = np.atleast_1d(np.asarray(cap, dtype=np.float64))
    if np.any(~np.isfinite(cap)):
        raise ValueError("non-finite grid cap")
    return np.array([_smallest_multiple_at_least(max(c, 0.0), k) for c in cap], dtype=np.int64)


def _thr(j, n, t, k):
    return np.sqrt(2.0 * (np.asarray(j) / k) * math.log(n) / t)


def _dist_hc_T(x: np.ndarray, spec: OracleNullSpec, k: int) -> tuple[np.ndarray, np.ndarray]:
    """T for a stack of panels x of shape (m, n, t); also returns grid sizes J."""
    m, n, t = x.shape
    scores = (x.mean(axis=2) - spec.mu0) / spec.sigma0
    M = _top_t_mean(x, t)
    J = _grid_last(((M - spec.mu0) / spec.sigma0) ** 2 * t / (2.0 * math.log(n)), k)
    cls = arithmetic_classes(scores, n, t, k, J[:, None])
    T = knot_max(cls, J, lambda j: spec.mean_tail(_thr(j, n, t, k), t))
    return T, J


@lru_cache(maxsize=32)
def _dist_hc_null(n: int, t: int, spec: OracleNullSpec, k: int, mc: int, seed: RngSeed) -> np.ndarray:
    check_budget(n, t, mc)
    base = seed.child(ORACLE_NULL)

    def one(c, size):
        x = spec.sample(base.child(c).generator(), (size, n, t))
        return _dist_hc_T(x, spec, k)[0]

    out = np.sort(np.concatenate(map_chunks(one, chunk_sizes(mc, n, t))))
    out.setflags(write=False)
    return out


def dist_aware_hc(m: ObservationMatrix, spec: OracleNullSpec, k: int | None = None,
                  mc: int = 10_000, seed=None) -> TestResult:
    """HC on subject means with exact null tails, calibrated by simulating the null."""
    if mc < 1000:
        raise ValueError("mc must be at least 1000")
    k = default_k(m.n) if k is None else int(k)
    seed = as_seed(seed)
    T, J = _dist_hc_T(m.values[None], spec, k)
    null = _dist_hc_null(m.n, m.t, spec, k, mc, seed)
    return TestResult(float(T[0]), p_value_mc(float(T[0]), null), METHOD_DIST_HC, None, None,
                      {"family": spec.family, "mu0": spec.mu0, "sigma0": spec.sigma0, "k_n": k,
                       "grid_size": int(J[0]), "mc": mc, "seed": seed.to_json()})


# ---------------------------------------------------------------------------
# Friedman


def friedman_core(doubled_sums: np.ndarray, n: int, t: int) -> np.ndarray:
    """Integer core Σ_i (D_i - t(n+1))² of the Friedman statistic, D = doubled rank sums."""
    d = np.asarray(doubled_sums, dtype=np.int64) - t * (n + 1)
    return (d * d).sum(axis=-1)


def friedman_from_core(core, n: int, t: int):
    """Q = 12/(t n (n+1)) Σ (S_i - t(n+1)/2)² = 3 core / (t n (n+1))."""
    return 3.0 * np.asarray(core, dtype=np.float64) / (t * n * (n + 1))


def friedman_statistic(ranks: np.ndarray) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    n, t = ranks.shape
    d = np.rint(2 * ranks.sum(axis=1)).astype(np.int64)
    return float(friedman_from_core(friedman_core(d, n, t), n, t))


def friedman_test(m: ObservationMatrix, mc: int = 10_000, seed=None, threads: int = 1,
                  backend=None) -> TestResult:
    """Friedman test (subjects as treatments, referentials as blocks), MC-calibrated."""
    seed = as_seed(seed)
    n, t = m.n, m.t
    check_budget(n, t, mc)
    r = compute_ranks(m, RANDOM_TIES, seed)
    core = int(friedman_core(r.doubled().sum(axis=1), n, t))
    cols = np.ascontiguousarray(np.repeat(2 * np.arange(1, n + 1, dtype=np.int64)[:, None], t, axis=1))
    base = seed.child(PERMUTE, TNULL_PHASE)

    def one(c, size):
        return friedman_core(panel_sums(cols, base, c, size, backend), n, t)

    null = np.concatenate(map_chunks(one, chunk_sizes(mc, n, t), threads))
    p = (1.0 + np.count_nonzero(null >= core)) / (mc + 1.0)
    return TestResult(float(friedman_from_core(core, n, t)), p, METHOD_FRIEDMAN, None, None,
                      {"mc": mc, "seed": seed.to_json(),
                       "chi2_asymptotic_p": float(stats.chi2.sf(friedman_from_core(core, n, t), n - 1))})


# ---------------------------------------------------------------------------
# Raw-data permutation HC


def raw_permutation_hc(m: ObservationMatrix, k: int | None = None, B: int = 10_000, seed=None,
                       threads: int = 1, backend=None) -> TestResult:
    """HC on raw subject means with permutation-estimated exceedance probabilities.

    Scores are (Y_i - grand mean)/(pooled sd); both are invariant under
    column-wise permutation, so the data-dependent grid is shared by all
    permuted panels. Pass one (B panels) estimates w_q by pooling subjects;
    pass two (B fresh panels) gives the null law of T. Assumes all referentials
    are identically distributed under the null.
    """
    if B < 99:
        raise ValueError("B must be at least 99")
    n, t = m.n, m.t
    k = default_k(n) if k is None else int(k)
    seed = as_seed(seed)
    check_budget(n, t, 2 * B)
    x = np.ascontiguousarray(m.values)
    center, scale = x.mean(), x.std()
    if scale == 0:
        return TestResult(0.0, 1.0, METHOD_PERM_HC, None, None, {"B": B, "k_n": k, "degenerate": True})
    M = _top_t_mean(x, t)
    J = int(_grid_last(((M - center) / scale) ** 2 * t / (2.0 * math.log(n)), k)[0])
    base = seed.child(PERMUTE)

    def classes_of(sums):
        return arithmetic_classes((sums / t - center) / scale, n, t, k, J)

    def pooled(c, size):
        return classes_of(panel_sums(x, base.child(PQ_PHASE), c, size, backend)).ravel()

    pool = np.sort(np.concatenate(map_chunks(pooled, chunk_sizes(B, n, t), threads)))
    tail_p = lambda j: (pool.size - np.searchsorted(pool, j, side="left")) / pool.size

    def tvals(c, size):
        return knot_max(classes_of(panel_sums(x, base.child(TNULL_PHASE), c, size, backend)), J, tail_p)

    null = np.sort(np.concatenate(map_chunks(tvals, chunk_sizes(B, n, t), threads)))
    obs = float(knot_max(classes_of(x.sum(axis=1)[None, :]), J, tail_p)[0])
    return TestResult(obs, p_value_mc(obs, null), METHOD_PERM_HC, None, None,
                      {"B": B, "k_n": k, "grid_size": J, "seed": seed.to_json()})
