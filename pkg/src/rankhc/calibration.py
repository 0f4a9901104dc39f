"""Monte-Carlo null tables, p-values and the three calibration modes."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .data import ObservationMatrix
from .hc import (STANDARD, EXTENDED, GridSpec, HcProfile, doubled_sum_lut, make_grid,
                 rank_hc, v_constants)
from .ranking import MIDRANK, RANDOM_TIES, RankMatrix, compute_ranks
from .rng import PERMUTE, PQ_PHASE, TNULL_PHASE, RngSeed, as_seed, fisher_yates_draws

TABLE_VERSION = 1
DEFAULT_MC = 100_000
DEFAULT_B = 10_000
CHUNK_ELEMENTS = 2 ** 21

METHOD_RANDOM_TIES = "random-ties-mc"
METHOD_MIDRANK_PERM = "midrank-permutation"
METHOD_MIDRANK_NAIVE = "midrank-naive"


class TableError(ValueError):
    """Raised for invalid, mismatched or corrupted null tables."""


class BudgetError(RuntimeError):
    """Raised when a Monte-Carlo request exceeds the configured work budget."""


def work_budget() -> float:
    return float(os.environ.get("RANKHC_MAX_WORK", 2e11))


def check_budget(n: int, t: int, mc: int, budget: float | None = None):
    budget = work_budget() if budget is None else budget
    if float(n) * t * mc > budget:
        raise BudgetError(
            f"n*t*mc = {n}*{t}*{mc} exceeds the work budget {budget:.3g}; "
            "raise RANKHC_MAX_WORK to allow it")


# ---------------------------------------------------------------------------
# Permutation-panel engine


def chunk_sizes(total: int, n: int, t: int) -> list[int]:
    """Deterministic split of ``total`` replicates; depends only on (total, n, t)."""
    size = max(1, CHUNK_ELEMENTS // (n * t))
    full, rest = divmod(total, size)
    return [size] * full + ([rest] if rest else [])


def map_chunks(fn, sizes, threads: int = 1):
    """Apply ``fn(chunk_index, size)`` to every chunk, results in chunk order."""
    if threads <= 1 or len(sizes) <= 1:
        return [fn(c, s) for c, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


def panel_sums(cols: np.ndarray, seed: RngSeed, chunk: int, size: int, backend=None) -> np.ndarray:
    """Row sums of ``size`` independent column-wise shuffles of ``cols``."""
    n, t = cols.shape
    rng = seed.child(chunk).generator()
    draws = fisher_yates_draws(rng, (size, t), n)
    return _kernels.get(backend).permuted_sums(cols, draws)


def identity_doubled(n: int, t: int) -> np.ndarray:
    col = 2 * np.arange(1, n + 1, dtype=np.int64)
    return np.ascontiguousarray(np.repeat(col[:, None], t, axis=1))


def pooled_doubled_hist(cols: np.ndarray, mc: int, seed: RngSeed, threads=1, backend=None) -> np.ndarray:
    """Histogram of doubled row sums D in [2t, 2nt] pooled over subjects and replicates."""
    n, t = cols.shape
    size = 2 * t * (n - 1) + 1

    def one(c, s):
        d = panel_sums(cols, seed, c, s, backend)
        return np.bincount((d - 2 * t).ravel(), minlength=size)

    return np.sum(map_chunks(one, chunk_sizes(mc, n, t), threads), axis=0).astype(np.int64)


def t_samples(cols: np.ndarray, grid: GridSpec, pq: np.ndarray, mc: int, seed: RngSeed,
              threads=1, backend=None) -> np.ndarray:
    """T for ``mc`` shuffled panels of ``cols`` with p_q held fixed."""
    n, t = cols.shape
    off, lut = doubled_sum_lut(grid)
    npq, den = v_constants(pq, n)
    kern = _kernels.get(backend)

    def one(c, s):
        d = panel_sums(cols, seed, c, s, backend)
        return kern.tail_max_dense(lut[d - off], npq, den)

    return np.concatenate(map_chunks(one, chunk_sizes(mc, n, t), threads))


def pq_from_doubled_hist(hist: np.ndarray, grid: GridSpec, clamp: bool = True) -> np.ndarray:
    """Pooled exceedance frequencies per grid point from a doubled-sum histogram."""
    off, lut = doubled_sum_lut(grid)
    if hist.shape != lut.shape:
        raise TableError("histogram does not match the grid's (n, t)")
    K = grid.size
    by_class = np.bincount(lut, weights=hist.astype(np.float64), minlength=K + 1)
    tails = np.cumsum(by_class[::-1])[::-1][1:]
    pq = tails / hist.sum()
    if clamp:
        pq = np.minimum.accumulate(pq)
    return pq


def pq_from_sum_hist(sum_hist: np.ndarray, grid: GridSpec, clamp: bool = True) -> np.ndarray:
    """Same as :func:`pq_from_doubled_hist` for an integer rank-sum histogram (S in [t, nt])."""
    n, t = grid.n, grid.t
    if sum_hist.shape != (t * (n - 1) + 1,):
        raise TableError("sum histogram does not match the grid's (n, t)")
    dh = np.zeros(2 * t * (n - 1) + 1, dtype=np.int64)
    dh[::2] = sum_hist
    return pq_from_doubled_hist(dh, grid, clamp)


def upper_tail_p(hist: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Add-one tail probability (1 + #{X >= x}) / (M + 1) from a histogram."""
    tail = np.concatenate([np.cumsum(hist[::-1])[::-1], [0]])
    index = np.clip(index, 0, hist.size)
    return (1.0 + tail[index]) / (hist.sum() + 1.0)


# ---------------------------------------------------------------------------
# Null table


@dataclass(frozen=True, eq=False)
class NullTable:
    n: int
    t: int
    grid: GridSpec
    pq: np.ndarray
    t_null: np.ndarray
    sum_hist: np.ndarray
    seed: RngSeed
    mc_pq: int
    mc_t: int
    version: int = TABLE_VERSION

    def __post_init__(self):
        if (self.grid.n, self.grid.t) != (self.n, self.t):
            raise TableError("grid shape does not match table shape")
        pq = np.asarray(self.pq, dtype=np.float64)
        tn = np.asarray(self.t_null, dtype=np.float64)
        if pq.shape != (self.grid.size,) or np.any(pq < 0) or np.any(pq > 1):
            raise TableError("pq must be aligned with the grid and lie in [0, 1]")
        if tn.shape != (self.mc_t,) or np.any(tn[1:] < tn[:-1]):
            raise TableError("t_null must be sorted with length mc_t")
        for a in (pq, tn):
            a.setflags(write=False)
        object.__setattr__(self, "pq", pq)
        object.__setattr__(self, "t_null", tn)
        object.__setattr__(self, "sum_hist", np.asarray(self.sum_hist, dtype=np.int64))

    def key(self) -> tuple:
        return (self.n, self.t, self.grid.kind, self.grid.k, self.mc_pq, self.mc_t,
                self.seed.seed, self.seed.path, self.version)

    def envelope(self) -> dict:
        return {
            "version": self.version,
            "n": self.n,
            "t": self.t,
            "grid": self.grid.to_json(),
            "pq": self.pq.tolist(),
            "t_null": self.t_null.tolist(),
            "sum_hist": self.sum_hist.tolist(),
            "seed": self.seed.to_json(),
            "mc_pq": self.mc_pq,
            "mc_t": self.mc_t,
        }

    def checksum(self) -> str:
        return _checksum(self.envelope())

    def to_json(self) -> dict:
        env = self.envelope()
        env["checksum"] = _checksum(env)
        return env

    @classmethod
    def from_json(cls, obj: dict) -> "NullTable":
        obj = dict(obj)
        stored = obj.pop("checksum", None)
        if stored != _checksum(obj):
            raise TableError("null table checksum mismatch (file corrupted or edited)")
        if obj.get("version") != TABLE_VERSION:
            raise TableError(f"null table version {obj.get('version')} != {TABLE_VERSION}")
        n, t = int(obj["n"]), int(obj["t"])
        return cls(n, t, GridSpec.from_json(obj["grid"], n, t), np.asarray(obj["pq"], dtype=float),
                   np.asarray(obj["t_null"], dtype=float), np.asarray(obj["sum_hist"], dtype=np.int64),
                   RngSeed.from_json(obj["seed"]), int(obj["mc_pq"]), int(obj["mc_t"]), obj["version"])

    def __eq__(self, other):
        if not isinstance(other, NullTable):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _checksum(obj) -> str:
    return hashlib.sha256(_canonical(obj)).hexdigest()


def tabulate_null(n: int, t: int, grid: GridSpec | None = None, mc_pq: int = DEFAULT_MC,
                  mc_t: int = DEFAULT_MC, seed: RngSeed | int | None = None, threads: int = 1,
                  backend=None, budget: float | None = None) -> NullTable:
    """Two-phase null table: pooled p_q first, then the law of T with p_q frozen."""
    if mc_pq < 100 or mc_t < 100:
        raise ValueError("mc_pq and mc_t must be at least 100")
    grid = make_grid(STANDARD, n, t) if grid is None else grid
    if (grid.n, grid.t) != (n, t):
        raise TableError("grid built for a different (n, t)")
    check_budget(n, t, mc_pq + mc_t, budget)
    seed = as_seed(seed)
    cols = identity_doubled(n, t)
    dh = pooled_doubled_hist(cols, mc_pq, seed.child(PQ_PHASE), threads, backend)
    sum_hist = dh[::2].copy()
    pq = pq_from_doubled_hist(dh, grid)
    tn = np.sort(t_samples(cols, grid, pq, mc_t, seed.child(TNULL_PHASE), threads, backend))
    return NullTable(n, t, grid, pq, tn, sum_hist, seed, mc_pq, mc_t)


def save_table(table: NullTable, path) -> Path:
    path = Path(path)
    if path.suffix == ".npz":
        env = table.to_json()
        np.savez_compressed(path, envelope=np.frombuffer(_canonical(env), dtype=np.uint8))
    else:
        path.write_text(json.dumps(table.to_json(), sort_keys=True, separators=(",", ":")))
    return path


def load_table(path, n: int | None = None, t: int | None = None,
               grid: GridSpec | None = None) -> NullTable:
    path = Path(path)
    try:
        if path.suffix == ".npz":
            with np.load(path) as z:
                raw = z["envelope"].tobytes().decode()
        else:
            raw = path.read_text()
        obj = json.loads(raw)
    except (OSError, ValueError, KeyError, EOFError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise TableError(f"cannot read null table {path}: checksum/format error ({exc})") from None
    if not isinstance(obj, dict):
        raise TableError("null table file is not a JSON object")
    table = NullTable.from_json(obj)
    if (n is not None and table.n != n) or (t is not None and table.t != t):
        raise TableError(f"null table has shape (n={table.n}, t={table.t}), requested (n={n}, t={t})")
    if grid is not None and grid != table.grid:
        raise TableError("null table grid does not match the requested grid")
    return table


def table_filename(n: int, t: int, kind: str, k: int, mc_pq: int, mc_t: int, seed: int) -> str:
    return f"null_n{n}_t{t}_{kind}_k{k}_pq{mc_pq}_mt{mc_t}_s{seed}_v{TABLE_VERSION}.json"


# ---------------------------------------------------------------------------
# Tests


@dataclass(eq=False)
class TestResult:
    statistic: float
    p_value: float
    method: str
    profile: HcProfile | None = None
    subject_p: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_json(self) -> dict:
        out = {
            "method": self.method,
            "statistic": float(self.statistic),
            "p_value": float(self.p_value),
            "profile": self.profile.to_json() if self.profile is not None else None,
            "subject_p": None if self.subject_p is None else [float(x) for x in self.subject_p],
            "meta": self.meta,
        }
        return out


def p_value_mc(t_obs: float, table: NullTable | np.ndarray) -> float:
    """(1 + #{null T >= t_obs}) / (M + 1)."""
    tn = table.t_null if isinstance(table, NullTable) else np.sort(np.asarray(table, dtype=float))
    exceed = tn.size - np.searchsorted(tn, t_obs, side="left")
    return (1.0 + exceed) / (tn.size + 1.0)


def _check_shape(m: ObservationMatrix, table: NullTable):
    if (m.n, m.t) != (table.n, table.t):
        raise TableError(f"data shape (n={m.n}, t={m.t}) does not match table (n={table.n}, t={table.t})")


def subject_p_from_hist(r: RankMatrix, doubled_hist: np.ndarray) -> np.ndarray:
    """p_i = (1 + #{pooled null D >= D_i}) / (M + 1) for each subject's doubled rank sum."""
    d = r.doubled().sum(axis=1)
    return upper_tail_p(doubled_hist, d - 2 * r.t)


def _table_doubled_hist(table: NullTable) -> np.ndarray:
    dh = np.zeros(2 * table.t * (table.n - 1) + 1, dtype=np.int64)
    dh[::2] = table.sum_hist
    return dh


def subject_p_values(m: ObservationMatrix, source, method: str = METHOD_RANDOM_TIES,
                     seed=None, B: int = DEFAULT_B) -> np.ndarray:
    """Subject-level p-values from a NullTable or from column permutations of midranks."""
    if method == METHOD_MIDRANK_PERM:
        r = compute_ranks(m, MIDRANK)
        dh = pooled_doubled_hist(np.ascontiguousarray(r.doubled()), B,
                                 as_seed(seed).child(PERMUTE, PQ_PHASE))
        return subject_p_from_hist(r, dh)
    _check_shape(m, source)
    policy = MIDRANK if method == METHOD_MIDRANK_NAIVE else RANDOM_TIES
    r = compute_ranks(m, policy, seed)
    return subject_p_from_hist(r, _table_doubled_hist(source))


def test_random_ties(m: ObservationMatrix, table: NullTable, seed=None,
                     subjects: bool = False) -> TestResult:
    """Rank-HC test with random tie-breaking, calibrated by a null table."""
    _check_shape(m, table)
    r = compute_ranks(m, RANDOM_TIES, seed)
    prof = rank_hc(r, table.grid, table.pq)
    sp = subject_p_from_hist(r, _table_doubled_hist(table)) if subjects else None
    return TestResult(prof.T, p_value_mc(prof.T, table), METHOD_RANDOM_TIES, prof, sp,
                      {"table": table.checksum(), "mc_pq": table.mc_pq, "mc_t": table.mc_t,
                       "seed": None if seed is None else as_seed(seed).to_json()})


def test_midrank_naive(m: ObservationMatrix, table: NullTable, subjects: bool = False) -> TestResult:
    """Midranks plugged into the random-ties null table (approximate calibration)."""
    _check_shape(m, table)
    r = compute_ranks(m, MIDRANK)
    prof = rank_hc(r, table.grid, table.pq)
    sp = subject_p_from_hist(r, _table_doubled_hist(table)) if subjects else None
    return TestResult(prof.T, p_value_mc(prof.T, table), METHOD_MIDRANK_NAIVE, prof, sp,
                      {"table": table.checksum(), "approximate": True,
                       "mc_pq": table.mc_pq, "mc_t": table.mc_t})


def test_midrank_permutation(m: ObservationMatrix, grid: GridSpec | None = None, B: int = DEFAULT_B,
                             seed=None, subjects: bool = False, threads: int = 1,
                             backend=None) -> TestResult:
    """Midrank HC calibrated by column-wise permutations of the midrank matrix.

    Pass one estimates p_q from B permuted panels; pass two draws B fresh
    panels and evaluates T against those p_q.
    """
    if B < 99:
        raise ValueError("B must be at least 99")
    grid = make_grid(STANDARD, m.n, m.t) if grid is None else grid
    if (grid.n, grid.t) != (m.n, m.t):
        raise TableError("grid built for a different (n, t)")
    check_budget(m.n, m.t, 2 * B)
    seed = as_seed(seed)
    r = compute_ranks(m, MIDRANK)
    cols = np.ascontiguousarray(r.doubled())
    base = seed.child(PERMUTE)
    dh = pooled_doubled_hist(cols, B, base.child(PQ_PHASE), threads, backend)
    pq = pq_from_doubled_hist(dh, grid)
    prof = rank_hc(r, grid, pq)
    tperm = np.sort(t_samples(cols, grid, pq, B, base.child(TNULL_PHASE), threads, backend))
    sp = subject_p_from_hist(r, dh) if subjects else None
    return TestResult(prof.T, p_value_mc(prof.T, tperm), METHOD_MIDRANK_PERM, prof, sp,
                      {"B": B, "seed": seed.to_json()})


def bound_k_over_t2(T: float, k: int) -> float:
    """min(1, k / T^2 + 1{T <= 0})."""
    if T <= 0:
        return 1.0
    if math.isinf(T):
        return 0.0
    return min(1.0, k / (T * T))
