"""Simulation settings, power experiments and the small exact fixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import binomtest

from .calibration import (NullTable, TableError, tabulate_null, test_midrank_naive,
                          test_random_ties)
from .comparators import OracleNullSpec, dist_aware_hc, friedman_test, raw_permutation_hc
from .data import ObservationMatrix
from .hc import EXTENDED, default_k, make_grid, rank_moments
from .ranking import RANDOM_TIES, compute_ranks
from .rng import DATA, METHOD, RngSeed, as_seed
from .theory import EXP_FAMILY_SIGMA0, theta_tau

SETTINGS = ("normal-shift", "exponential-rate", "uniform-tilt", "convolution-normal",
            "convolution-triangular", "cauchy-shift")

NULL_SPECS = {
    "normal-shift": OracleNullSpec("normal", 0.0, 1.0),
    "exponential-rate": OracleNullSpec("exponential", 2.0 / 3.0, 2.0 / 3.0),
    "uniform-tilt": OracleNullSpec("uniform", 0.5, 1.0 / math.sqrt(12.0)),
    "convolution-normal": OracleNullSpec("normal", 0.0, 1.0),
    "convolution-triangular": OracleNullSpec("normal", 0.0, 1.0),
    "cauchy-shift": OracleNullSpec("cauchy", 0.0, 1.0),
}


def n_anomalous(n: int, beta: float) -> int:
    """|S| = ceil(n^(1 - beta))."""
    return min(n, math.ceil(n ** (1.0 - beta)))


@dataclass(frozen=True)
class SignalSpec:
    setting: str
    tau: float
    beta: float
    n: int
    t: int
    sigma: float | None = None
    n_anom: int | None = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}; choose from {SETTINGS}")
        if self.setting.startswith("convolution") and self.sigma is None:
            raise ValueError("convolution settings need sigma")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.size > self.n:
            raise ValueError("more anomalous subjects than subjects")
        if not math.isfinite(self.theta):
            raise ValueError("theta is not finite")

    @property
    def size(self) -> int:
        return n_anomalous(self.n, self.beta) if self.n_anom is None else int(self.n_anom)

    @property
    def theta(self) -> float:
        s = self.setting
        if s == "normal-shift":
            return theta_tau("exp-family", self.tau, self.beta, self.n, self.t, sigma0=1.0)
        if s == "exponential-rate":
            return theta_tau("exp-family", self.tau, self.beta, self.n, self.t,
                             sigma0=EXP_FAMILY_SIGMA0["exponential"])
        if s == "uniform-tilt":
            return theta_tau("exp-family", self.tau, self.beta, self.n, self.t,
                             sigma0=EXP_FAMILY_SIGMA0["uniform"])
        if s == "cauchy-shift":
            return theta_tau("cauchy", self.tau, self.beta, self.n, self.t)
        G = "point-mass" if s == "convolution-normal" else "triangular"
        return theta_tau("convolution", self.tau, self.beta, self.n, self.t, sigma=self.sigma, G=G)

    @property
    def null_spec(self) -> OracleNullSpec:
        return NULL_SPECS[self.setting]

    def to_json(self) -> dict:
        return {"setting": self.setting, "tau": self.tau, "beta": self.beta, "n": self.n,
                "t": self.t, "sigma": self.sigma, "n_anomalous": self.size, "theta": self.theta}


def uniform_tilt_quantile(u: np.ndarray, theta: float) -> np.ndarray:
    """Inverse of F(x) = (e^{θx} - 1)/(e^θ - 1) on [0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    if abs(theta) < 1e-6:
        return u + theta * u * (1.0 - u) / 2.0
    return np.log1p(u * math.expm1(theta)) / theta


def uniform_tilt_cdf(x: np.ndarray, theta: float) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    if theta == 0:
        return x
    return np.expm1(theta * x) / math.expm1(theta)


def _draw(setting: str, rng: np.random.Generator, shape, theta: float, sigma) -> np.ndarray:
    if setting == "normal-shift":
        return rng.normal(size=shape) + theta
    if setting == "exponential-rate":
        rate = 1.5 - theta
        if not rate > 0:
            raise ValueError("exponential-rate needs theta < 3/2")
        return rng.exponential(1.0 / rate, size=shape)
    if setting == "uniform-tilt":
        return uniform_tilt_quantile(rng.random(shape), theta)
    if setting == "cauchy-shift":
        return rng.standard_cauchy(shape) + theta
    z = sigma * rng.normal(size=shape)
    if setting == "convolution-normal":
        return z + theta
    q = (rng.random(shape) + rng.random(shape)) / 2.0
    return z + theta * q


def generate(spec: SignalSpec, seed) -> ObservationMatrix:
    """Panel whose first |S| rows are anomalous and the rest null.

    Null and anomalous rows use separate streams, so for a fixed seed the null
    block does not depend on tau.
    """
    base = as_seed(seed).child(DATA)
    s, n, t = spec.size, spec.n, spec.t
    out = np.empty((n, t))
    null_setting = "normal-shift" if spec.setting.startswith("convolution") else spec.setting
    out[s:] = _draw(null_setting, base.child(0).generator(), (n - s, t), 0.0, None)
    if s:
        out[:s] = _draw(spec.setting, base.child(1).generator(), (s, t), spec.theta, spec.sigma)
    return ObservationMatrix(out)


# ---------------------------------------------------------------------------
# Experiments

METHODS = ("rank", "dist-hc", "perm-hc", "friedman", "midrank-naive")


@dataclass
class MethodConfig:
    """Per-method calibration settings used inside experiments."""

    dist_mc: int = 2000
    perm_B: int = 99
    friedman_mc: int = 999
    calib_seed: int = 0


@dataclass
class PowerCurve:
    method: str
    meta: dict
    rows: list = field(default_factory=list)
    outcomes: list = field(default_factory=list, repr=False)

    def add(self, tau: float, rejections: int, trials: int, outcomes=None):
        """Append one tau point; ``outcomes`` optionally keeps the per-trial rejections."""
        if outcomes is not None:
            self.outcomes.append(np.asarray(outcomes, dtype=bool))
        ci = binomtest(rejections, trials).proportion_ci(0.95, method="wilson")
        self.rows.append({"tau": float(tau), "rejections": int(rejections), "trials": int(trials),
                          "power": rejections / trials, "ci_lo": float(ci.low),
                          "ci_hi": float(ci.high),
                          "half_width": float(ci.high - ci.low) / 2.0})

    @property
    def power(self) -> np.ndarray:
        return np.array([r["power"] for r in self.rows])

    @property
    def taus(self) -> np.ndarray:
        return np.array([r["tau"] for r in self.rows])


CSV_FIELDS = ("tau", "method", "power", "ci_lo", "ci_hi", "trials", "rejections", "setting", "n",
              "t", "n_anomalous", "alpha", "k_n")


def curves_to_rows(curves: Mapping[str, PowerCurve]) -> list[dict]:
    rows = []
    for label, c in curves.items():
        for r in c.rows:
            rows.append({**{k: c.meta.get(k) for k in CSV_FIELDS}, **r, "method": label})
    return rows


def _run_method(method: str, m: ObservationMatrix, spec: SignalSpec, table, cfg: MethodConfig,
                seed: RngSeed, k) -> float:
    if method == "rank":
        return test_random_ties(m, table, seed).p_value
    if method == "midrank-naive":
        return test_midrank_naive(m, table).p_value
    if method == "dist-hc":
        return dist_aware_hc(m, spec.null_spec, k, cfg.dist_mc, cfg.calib_seed).p_value
    if method == "perm-hc":
        return raw_permutation_hc(m, k, cfg.perm_B, seed).p_value
    if method == "friedman":
        return friedman_test(m, cfg.friedman_mc, seed).p_value
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def _lookup_table(tables, n, t, tabulate, table_mc, seed, kind=EXTENDED):
    tables = {} if tables is None else tables
    for key in ((n, t), t):
        if key in tables:
            return tables[key]
    if not tabulate:
        raise TableError(f"null table missing for (n={n}, t={t})")
    mc_pq, mc_t = table_mc
    tab = tabulate_null(n, t, make_grid(kind, n, t), mc_pq, mc_t, seed)
    if isinstance(tables, dict):
        tables[(n, t)] = tab
    return tab


def power_experiment(base: SignalSpec, taus: Sequence[float], alpha: float = 0.05, trials: int = 1000,
                     methods: Sequence[str] = ("rank",), seed=None, tables=None,
                     config: MethodConfig | None = None, k: int | None = None,
                     tabulate: bool = False, table_mc=(10_000, 10_000),
                     grid_kind: str = EXTENDED) -> dict[str, PowerCurve]:
    """Rejection rates at level ``alpha`` for each tau and method.

    Trial i uses the same data seed for every tau and method (common random
    numbers), so curves are paired. The rank methods take their grid from
    the supplied null table (or tabulate one on ``grid_kind`` with default
    resolution); the comparators use resolution ``k``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    cfg = config or MethodConfig()
    seed = as_seed(seed)
    need_table = any(mm in ("rank", "midrank-naive") for mm in methods)
    table = (_lookup_table(tables, base.n, base.t, tabulate, table_mc, seed.child(99), grid_kind)
             if need_table else None)
    kk = k if k is not None else (table.grid.k if table is not None else default_k(base.n))
    curves = {}
    for mm in methods:
        meta = {"setting": base.setting, "n": base.n, "t": base.t, "n_anomalous": base.size,
                "alpha": alpha, "method": mm, "beta": base.beta, "sigma": base.sigma,
                "k_n": table.grid.k if mm in ("rank", "midrank-naive") else kk,
                "seed": seed.to_json(), "trials": trials}
        curves[mm] = PowerCurve(mm, meta)
    for tau in taus:
        spec = replace(base, tau=float(tau))
        rej = {mm: np.zeros(trials, dtype=bool) for mm in methods}
        for i in range(trials):
            m = generate(spec, seed.child(i))
            for j, mm in enumerate(methods):
                p = _run_method(mm, m, spec, table, cfg, seed.child(i, METHOD, j), kk)
                rej[mm][i] = p <= alpha
        for mm in methods:
            curves[mm].add(tau, int(rej[mm].sum()), trials, rej[mm])
    return curves


def grid_experiment(base: SignalSpec, k_list: Sequence[int], taus: Sequence[float], alpha: float = 0.05,
                    trials: int = 10_000, seed=None, kind: str = EXTENDED,
                    table_mc=(10_000, 10_000), tables: Mapping[int, NullTable] | None = None
                    ) -> dict[int, PowerCurve]:
    """Rank-test power curves for several grid resolutions on paired data."""
    seed = as_seed(seed)
    n, t = base.n, base.t
    tabs = {}
    for k in k_list:
        if tables is not None and k in tables:
            tabs[k] = tables[k]
        else:
            tabs[k] = tabulate_null(n, t, make_grid(kind, n, t, k), *table_mc, seed=seed.child(98, k))
    curves = {k: PowerCurve("rank", {"setting": base.setting, "n": n, "t": t, "n_anomalous": base.size,
                                     "alpha": alpha, "k_n": k, "grid": kind, "seed": seed.to_json()})
              for k in k_list}
    for tau in taus:
        spec = replace(base, tau=float(tau))
        rej = {k: np.zeros(trials, dtype=bool) for k in k_list}
        for i in range(trials):
            m = generate(spec, seed.child(i))
            for k in k_list:
                rej[k][i] = test_random_ties(m, tabs[k], seed.child(i, METHOD)).p_value <= alpha
        for k in k_list:
            curves[k].add(tau, int(rej[k].sum()), trials, rej[k])
    return curves


def stream_length_experiment(n: int, s: int, tau: float, t_list: Sequence[int], trials: int = 1000,
                             seed=None, setting: str = "normal-shift", beta: float | None = None,
                             alpha: float = 0.05, table_mc=(10_000, 10_000), tables=None,
                             tabulate: bool = True, grid_kind: str = EXTENDED) -> dict[int, PowerCurve]:
    """Rank-test power at one tau for several stream lengths t with |S| = s fixed.

    beta defaults to 1 - log(s)/log(n) so that ceil(n^(1-beta)) = s.
    """
    seed = as_seed(seed)
    beta = 1.0 - math.log(s) / math.log(n) if beta is None else beta
    out = {}
    for t in t_list:
        spec = SignalSpec(setting, tau, beta, n, t, n_anom=s)
        out[t] = power_experiment(spec, [tau], alpha, trials, ("rank",), seed.child(t), tables,
                                  tabulate=tabulate, table_mc=table_mc, grid_kind=grid_kind)["rank"]
    return out


# ---------------------------------------------------------------------------
# Moment and counterexample fixtures


def appendix_b_samplers(p: float):
    """Null: U[0,1] w.p. p else U[2,3]; anomalous: U[1,2]. E[U] = p, E[U²] = p²."""
    if not 0 <= p <= 1:
        raise ValueError("p must be in [0, 1]")

    def null(rng, size):
        u = rng.random(size)
        return np.where(rng.random(size) < p, u, 2.0 + u)

    def anom(rng, size):
        return 1.0 + rng.random(size)

    return null, anom, (p, p * p)


def appendix_c_samplers(n: int):
    """Null: U[-1,1]; anomalous: U[-a, a] with a = 2 + sin n. E[U] = 1/2."""
    a = 2.0 + math.sin(n)

    def null(rng, size):
        return rng.uniform(-1.0, 1.0, size)

    def anom(rng, size):
        return rng.uniform(-a, a, size)

    return null, anom, (0.5, (5.0 + 3.0 * math.sin(n)) / (12.0 + 6.0 * math.sin(n)))


def appendix_d_matrices(n: int, s: int, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """The two equally likely panels (t = 2) of the degenerate construction.

    Anomalous rows 1..s have X_i1 = i and X_i2 = s - i, except X_12 which is
    s - 1 or -1. Null rows are U[-2, -1] and shared by both panels.
    """
    if not 3 <= s <= n - 2:
        raise ValueError("need 3 <= s <= n - 2")
    rng = as_seed(seed).child(DATA).generator()
    null = rng.uniform(-2.0, -1.0, size=(n - s, 2))
    i = np.arange(1, s + 1, dtype=np.float64)
    top = np.column_stack([i, s - i])
    x1 = np.vstack([top, null])
    x1[0, 1] = s - 1
    x2 = x1.copy()
    x2[0, 1] = -1.0
    return x1, x2


def _indicator_moments(ind: list[np.ndarray]):
    """Exact Σ Var and Σ_{i≠k} Cov of indicator vectors over equally likely outcomes."""
    w = Fraction(1, len(ind))
    e = [sum(w * int(o[i]) for o in ind) for i in range(ind[0].size)]
    exy = lambda i, k: sum(w * int(o[i]) * int(o[k]) for o in ind)
    active = [i for i in range(len(e)) if any(o[i] for o in ind)]
    sv = sum(e[i] - e[i] * e[i] for i in active)
    sc = sum(exy(i, k) - e[i] * e[k] for i in active for k in active if i != k)
    return sv, sc


def appendix_d_fixture(n: int, s: int, seed=0) -> dict:
    """Exact enumeration of the two-outcome counterexample.

    Reports the indicator variance/covariance sums at two thresholds: the
    rank-mean level z = (2n - s)/2 named alongside the construction and the
    level z = (2n - s + 2)/2 at which exactly subjects 2..s exceed in one
    outcome and nobody does in the other.
    """
    x1, x2 = appendix_d_matrices(n, s, seed)
    ranks = [compute_ranks(x, RANDOM_TIES, 0).ranks.astype(np.int64) for x in (x1, x2)]
    sums = [r.sum(axis=1) for r in ranks]  # exact integer rank sums; Y = sum/2
    rbar, sr = rank_moments(n)

    def at(z2: int):
        ind = [sm >= z2 for sm in sums]  # Y >= z  <=>  rank sum >= 2z
        sv, sc = _indicator_moments(ind)
        z = Fraction(z2, 2)
        q = 2 * ((float(z) - rbar) / sr) ** 2 / (2 * math.log(n))
        return {"z": float(z), "q": q, "sum_var": sv, "sum_cov": sc,
                "identity_holds": sc == (s - 2) * sv and sv == Fraction(s - 1, 4)
                and sc == Fraction((s - 1) * (s - 2), 4)}

    return {
        "n": n, "s": s, "t": 2,
        "X1": x1, "X2": x2, "R1": ranks[0], "R2": ranks[1],
        "rank_means": [[Fraction(int(x), 2) for x in sm] for sm in sums],
        "q_stated": 3 * (n - s - 1) ** 2 / ((n * n - 1) * math.log(n)),
        "q_effective": 3 * (n - s + 1) ** 2 / ((n * n - 1) * math.log(n)),
        "stated": at(2 * n - s),
        "effective": at(2 * n - s + 2),
    }
