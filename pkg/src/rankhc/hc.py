"""Rank-based higher criticism: grids, exceedance counts and the statistic T."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._kernels import _numpy as _ref
from .ranking import RankMatrix

STANDARD = "standard"
EXTENDED = "extended"
ARITHMETIC = "arithmetic"
GRID_KINDS = (STANDARD, EXTENDED, ARITHMETIC)


def default_k(n: int) -> int:
    """ceil(ln(n)^2), the default grid resolution."""
    return max(1, math.ceil(math.log(n) ** 2))


def rank_moments(n: int) -> tuple[float, float]:
    """(R̄, σ_R) for ranks uniform on {1, ..., n}."""
    return (n + 1) / 2.0, math.sqrt((n * n - 1) / 12.0)


def extended_cap(n: int, t: int) -> float:
    """Largest q at which any subject can still exceed the threshold."""
    return 3.0 * t / (2.0 * math.log(n))


def _smallest_multiple_at_least(x: float, k: int) -> int:
    j = max(1, math.ceil(x * k))
    while j / k < x:
        j += 1
    while j > 1 and (j - 1) / k >= x:
        j -= 1
    return j


@dataclass(frozen=True)
class GridSpec:
    """Threshold grid {j/k : j in numerators}; q values are exact rationals."""

    kind: str
    k: int
    n: int
    t: int
    numerators: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in GRID_KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2 (log n must be positive)")
        if self.t < 1 or self.k < 1:
            raise ValueError("t and k must be positive")
        nums = tuple(int(j) for j in self.numerators)
        if not nums or nums[0] < 1 or any(b <= a for a, b in zip(nums, nums[1:])):
            raise ValueError("grid numerators must be positive and strictly increasing")
        object.__setattr__(self, "numerators", nums)

    @property
    def size(self) -> int:
        return len(self.numerators)

    @property
    def fractions(self) -> list[Fraction]:
        return [Fraction(j, self.k) for j in self.numerators]

    @property
    def q(self) -> np.ndarray:
        return np.array([float(f) for f in self.fractions])

    def thresholds(self) -> np.ndarray:
        """Standardized thresholds sqrt(2 q ln n / t)."""
        return np.sqrt(2.0 * self.q * math.log(self.n) / self.t)

    def key(self) -> tuple:
        return (self.kind, self.k, self.n, self.t, self.numerators)

    def to_json(self) -> dict:
        return {"kind": self.kind, "k_n": self.k, "q": self.q.tolist(),
                "numerators": list(self.numerators)}

    @classmethod
    def from_json(cls, obj: dict, n: int, t: int) -> "GridSpec":
        g = cls(obj["kind"], int(obj["k_n"]), n, t, tuple(obj["numerators"]))
        if "q" in obj and not np.array_equal(np.asarray(obj["q"], dtype=float), g.q):
            raise ValueError("grid q values inconsistent with numerators")
        return g


def make_grid(kind: str, n: int, t: int, k: int | None = None, cap: float | None = None) -> GridSpec:
    """Build a grid.

    standard: {2/k, 4/k, ..., 2}. extended: {1/k, 2/k, ...} through the first
    point >= 3t/(2 ln n). arithmetic: {1/k, ...} through the first point >= cap.
    """
    if n < 2:
        raise ValueError("n must be at least 2 (log n must be positive)")
    k = default_k(n) if k is None else int(k)
    if k < 1:
        raise ValueError("k must be positive")
    if kind == STANDARD:
        nums = tuple(range(2, 2 * k + 1, 2))
    elif kind == EXTENDED:
        nums = tuple(range(1, _smallest_multiple_at_least(extended_cap(n, t), k) + 1))
    elif kind == ARITHMETIC:
        if cap is None or not math.isfinite(cap):
            raise ValueError("arithmetic grid needs a finite cap")
        nums = tuple(range(1, _smallest_multiple_at_least(max(cap, 0.0), k) + 1))
    else:
        raise ValueError(f"unknown grid kind {kind!r}")
    return GridSpec(kind, k, n, t, nums)


def subject_rank_means(r: RankMatrix | np.ndarray) -> np.ndarray:
    ranks = r.ranks if isinstance(r, RankMatrix) else np.asarray(r, dtype=np.float64)
    return ranks.sum(axis=1) / ranks.shape[1]


def standardized(y: np.ndarray, n: int) -> np.ndarray:
    rbar, sr = rank_moments(n)
    return (np.asarray(y, dtype=np.float64) - rbar) / sr


def classes(scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Number of thresholds each score meets (score >= thr)."""
    return np.searchsorted(thresholds, scores, side="right").astype(np.int64)


def exceedance_counts(y: np.ndarray, grid: GridSpec) -> np.ndarray:
    """N_q = #{i : (Y_i - R̄)/σ_R >= sqrt(2 q ln n / t)} for each grid q."""
    s = standardized(y, grid.n)
    thr = grid.thresholds()
    return (s[None, :] >= thr[:, None]).sum(axis=1).astype(np.int64)


def doubled_sum_lut(grid: GridSpec) -> tuple[int, np.ndarray]:
    """Class of every attainable doubled rank sum D (range [2t, 2nt]).

    Classes agree exactly with ``exceedance_counts`` applied to y = (D/2)/t.
    Returns (offset, lut) with class(D) = lut[D - offset].
    """
    n, t = grid.n, grid.t
    d = np.arange(2 * t, 2 * n * t + 1, dtype=np.int64)
    y = (d / 2.0) / t
    return 2 * t, classes(standardized(y, n), grid.thresholds())


def standardize_v(counts, npq, n: int, pq=None) -> np.ndarray:
    """V = (N - n p)/sqrt(n p (1 - p)) with 0/0 = 0 and ±inf otherwise."""
    npq = np.asarray(npq, dtype=np.float64)
    p = npq / n if pq is None else np.asarray(pq, dtype=np.float64)
    den = np.sqrt(npq * (1.0 - p))
    return _ref._v(np.asarray(counts, dtype=np.float64) - npq, npq, den)


def v_constants(pq: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(n p, sqrt(n p (1 - p))) as used by every T evaluation."""
    pq = np.asarray(pq, dtype=np.float64)
    npq = n * pq
    return npq, np.sqrt(npq * (1.0 - pq))


@dataclass(frozen=True, eq=False)
class HcProfile:
    grid: GridSpec
    z: np.ndarray
    N: np.ndarray
    p: np.ndarray
    V: np.ndarray
    T: float

    def to_json(self) -> dict:
        return {
            "T": float(self.T),
            "grid": self.grid.to_json(),
            "per_q": [
                {"q": float(q), "z": float(z), "N": int(c), "p": float(p), "V": float(v)}
                for q, z, c, p, v in zip(self.grid.q, self.z, self.N, self.p, self.V)
            ],
        }

    def __eq__(self, other):
        if not isinstance(other, HcProfile):
            return NotImplemented
        return (self.grid == other.grid and self.T == other.T
                and all(np.array_equal(a, b) for a, b in
                        ((self.z, other.z), (self.N, other.N), (self.p, other.p), (self.V, other.V))))

    __hash__ = None


def hc_statistic(counts, pq, n: int, grid: GridSpec | None = None) -> HcProfile:
    """Assemble V_q and T = max_q V_q from counts and null probabilities."""
    counts = np.asarray(counts, dtype=np.int64)
    pq = np.asarray(pq, dtype=np.float64)
    if counts.shape != pq.shape:
        raise ValueError("counts and pq must be aligned")
    if np.any(pq < 0) or np.any(pq > 1) or np.any(~np.isfinite(pq)):
        raise ValueError("p_q must lie in [0, 1]")
    npq, den = v_constants(pq, n)
    V = _ref._v(counts.astype(np.float64) - npq, npq, den)
    if grid is None:
        z = np.full(counts.shape, np.nan)
        grid_ = GridSpec(ARITHMETIC, 1, max(n, 2), 1, tuple(range(1, counts.size + 1)))
    else:
        grid_ = grid
        rbar, sr = rank_moments(grid.n)
        z = rbar + sr * grid.thresholds()
    return HcProfile(grid_, z, counts, pq, V, float(V.max()))


def rank_hc(r: RankMatrix, grid: GridSpec, pq) -> HcProfile:
    """Full rank-HC profile of a rank matrix against null probabilities ``pq``."""
    if (r.n, r.t) != (grid.n, grid.t):
        raise ValueError(f"rank matrix shape {(r.n, r.t)} does not match grid {(grid.n, grid.t)}")
    return hc_statistic(exceedance_counts(subject_rank_means(r), grid), pq, grid.n, grid)


def arithmetic_classes(scores: np.ndarray, n: int, t: int, k: int, J) -> np.ndarray:
    """Classes for the grid {j/k : j = 1..J} without materializing the grid.

    Equals ``classes(scores, thresholds)`` for that grid; J may be huge and may
    differ per row (broadcast against ``scores``).
    """
    ln = math.log(n)
    s = np.asarray(scores, dtype=np.float64)
    J = np.broadcast_to(np.asarray(J, dtype=np.int64), s.shape)
    thr = lambda j: np.sqrt(2.0 * (j / k) * ln / t)
    with np.errstate(invalid="ignore", over="ignore"):
        guess = np.floor(np.where(s > 0, s * s * t * k / (2.0 * ln), 0.0))
    c = np.clip(np.nan_to_num(guess, posinf=np.iinfo(np.int64).max // 4), 0, J).astype(np.int64)
    up = (c < J) & (thr(c + 1) <= s)
    c = c + up
    down = (c > 0) & (thr(np.maximum(c, 1)) > s)
    return c - down


def knot_max(cls: np.ndarray, last, tail_p) -> np.ndarray:
    """Row-wise max of V over the grid {1..J} evaluated only at run ends.

    ``cls`` holds classes in [0, J]; ``tail_p(j)`` gives the null probability at
    grid index j and must be nonincreasing in j. For fixed N, V is strictly
    decreasing in p, so within each run of indices sharing the same N the
    maximum is at the last index of the run: an occupied class or J itself.
    """
    m, n = cls.shape
    last = np.broadcast_to(np.asarray(last, dtype=np.int64), (m,))
    a = np.sort(cls, axis=1)
    counts = (n - np.arange(n)).astype(np.float64)
    knot = np.ones((m, n), dtype=bool)
    knot[:, 1:] = a[:, 1:] != a[:, :-1]
    knot &= a >= 1
    p = np.asarray(tail_p(np.where(knot, a, 1)), dtype=np.float64)
    npq, den = v_constants(p, n)
    v = np.where(knot, _ref._v(counts[None, :] - npq, npq, den), -np.inf)
    n_last = (cls >= last[:, None]).sum(axis=1).astype(np.float64)
    pl = np.asarray(tail_p(last), dtype=np.float64)
    npl, denl = v_constants(pl, n)
    return np.maximum(v.max(axis=1), _ref._v(n_last - npl, npl, denl))
