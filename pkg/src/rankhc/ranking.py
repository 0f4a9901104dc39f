"""Per-referential ranks and the column-permutation primitive."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import ObservationMatrix
from .rng import ATOMS, PERMUTE, TIES, RngSeed, as_seed

RANDOM_TIES = "random-ties"
MIDRANK = "midrank"
POLICIES = (RANDOM_TIES, MIDRANK)


@dataclass(frozen=True, eq=False)
class RankMatrix:
    """Column-wise ranks stored as float64 (half-integers under midranking)."""

    ranks: np.ndarray
    policy: str = RANDOM_TIES

    def __post_init__(self):
        r = np.array(self.ranks, dtype=np.float64, copy=True)
        if r.ndim != 2:
            raise ValueError("ranks must be 2-d")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown rank policy {self.policy!r}")
        r.setflags(write=False)
        object.__setattr__(self, "ranks", r)

    @property
    def n(self) -> int:
        return self.ranks.shape[0]

    @property
    def t(self) -> int:
        return self.ranks.shape[1]

    def doubled(self) -> np.ndarray:
        """Integer array 2*R; exact for both integer ranks and midranks."""
        d = np.rint(2.0 * self.ranks).astype(np.int64)
        return d

    def __eq__(self, other):
        if not isinstance(other, RankMatrix):
            return NotImplemented
        return self.policy == other.policy and np.array_equal(self.ranks, other.ranks)

    __hash__ = None


def _random_tie_ranks(col: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Sorting by (value, uniform key) orders each tie group by a uniform
    # random permutation; distinct values ignore the key entirely.
    keys = rng.random(col.shape[0])
    order = np.lexsort((keys, col))
    r = np.empty(col.shape[0])
    r[order] = np.arange(1, col.shape[0] + 1, dtype=np.float64)
    return r


def compute_ranks(m: ObservationMatrix | np.ndarray, policy: str = RANDOM_TIES,
                  seed: RngSeed | int | None = None) -> RankMatrix:
    """Rank each column. ``seed`` is only consulted for tied values under random-ties."""
    x = m.values if isinstance(m, ObservationMatrix) else np.asarray(m, dtype=np.float64)
    if policy == MIDRANK:
        return RankMatrix(rankdata(x, method="average", axis=0), MIDRANK)
    if policy != RANDOM_TIES:
        raise ValueError(f"unknown rank policy {policy!r}")
    n, t = x.shape
    out = np.empty((n, t))
    base = None
    for j in range(t):
        col = x[:, j]
        if np.unique(col).size == n:
            out[:, j] = rankdata(col, method="ordinal")
            continue
        if base is None:
            base = as_seed(seed)
        out[:, j] = _random_tie_ranks(col, base.child(TIES, j).generator())
    return RankMatrix(out, RANDOM_TIES)


def has_ties(m: ObservationMatrix | np.ndarray) -> bool:
    x = m.values if isinstance(m, ObservationMatrix) else np.asarray(m)
    s = np.sort(x, axis=0)
    return bool((s[1:] == s[:-1]).any())


def column_permute(r: RankMatrix, seed: RngSeed | int) -> RankMatrix:
    """Independently shuffle every column by a uniform permutation."""
    rng = as_seed(seed).child(PERMUTE).generator()
    return RankMatrix(rng.permuted(r.ranks, axis=0), r.policy)


def null_cdf_transform(m: ObservationMatrix | np.ndarray,
                       null_cdfs: Callable | Sequence[Callable],
                       seed: RngSeed | int | None = None, atom_tol: float = 1e-12) -> np.ndarray:
    """Probability-integral transform U = F0(X), randomized at atoms.

    At an atom x of F0 the value is uniform on [F0(x-), F0(x)], i.e.
    U = F0(x-) + (F0(x) - F0(x-)) * V with V ~ U[0, 1]. This is uniform on
    [0, 1] under the null for any F0. ``seed`` is required only when an atom
    is hit. Jumps below ``atom_tol`` are treated as rounding in a continuous
    CDF evaluated at adjacent floats.
    """
    x = m.values if isinstance(m, ObservationMatrix) else np.asarray(m, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, t = x.shape
    cdfs = [null_cdfs] * t if callable(null_cdfs) else list(null_cdfs)
    if len(cdfs) != t:
        raise ValueError(f"need {t} CDF evaluators, got {len(cdfs)}")
    u = np.empty((n, t))
    base = None
    for j, F in enumerate(cdfs):
        col = x[:, j]
        hi = np.asarray(F(col), dtype=np.float64)
        lo = np.asarray(F(np.nextafter(col, -np.inf)), dtype=np.float64)
        for arr in (hi, lo):
            if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
                raise ValueError(f"CDF for column {j} returned values outside [0, 1]")
        jump = np.where(hi - lo > atom_tol, hi - lo, 0.0)
        if np.any(jump > 0):
            if base is None:
                base = as_seed(seed)
            v = base.child(ATOMS, j).generator().random(n)
            u[:, j] = np.where(jump > 0, lo + jump * v, hi)
        else:
            u[:, j] = hi
    return u
