"""Detection boundaries, rank-loss constants and anomaly characteristics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats

from .rng import MOMENTS, RngSeed, as_seed

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)


def _check_beta(beta):
    b = np.asarray(beta, dtype=np.float64)
    if np.any(~(b > 0.5)) or np.any(~(b < 1.0)):
        raise ValueError(f"beta must lie in (1/2, 1), got {beta}")
    return b


def rho(beta, sigma):
    """Detection boundary of the heteroskedastic normal location model.

    Vectorized over ``beta`` and ``sigma`` (broadcast). Returns a float for
    scalar input.
    """
    b = _check_beta(beta)
    s = np.asarray(sigma, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("sigma must be nonnegative")
    b, s = np.broadcast_arrays(b, s)
    upper = (1.0 - s * np.sqrt(1.0 - b)) ** 2
    low_sigma = np.where(b <= 1.0 - s * s / 4.0, (2.0 - s * s) * (b - 0.5), upper)
    with np.errstate(divide="ignore"):
        seam = 1.0 - 1.0 / (s * s)
    high_sigma = np.where(b <= seam, 0.0, upper)
    out = np.where(s < SQRT2, low_sigma, high_sigma)
    return float(out) if out.ndim == 0 else out


def xi_sigma_sq(sigma: float) -> float:
    """ξ_σ² = 12 (E[Φ(σZ)²] - 1/4) by adaptive quadrature."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return 0.0
    f = lambda z: stats.norm.cdf(sigma * z) ** 2 * stats.norm.pdf(z)
    val, err = integrate.quad(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    if not err < 1e-10:
        raise ArithmeticError(f"quadrature for xi did not converge (err={err:.2e})")
    return max(0.0, 12.0 * (val - 0.25))


def xi_sigma(sigma: float) -> float:
    return math.sqrt(xi_sigma_sq(sigma))


def rho_tilde(beta, sigma: float):
    """Means-based-oracle boundary expressed through the rank heteroskedasticity ξ_σ."""
    return math.sqrt(math.pi * (sigma * sigma + 1.0) / 6.0) * rho(beta, xi_sigma(sigma))


# ---------------------------------------------------------------------------
# Υ₀

UPSILON0_CLOSED = {
    "uniform": 1.0,
    "exponential": 2.0 / SQRT3,
    "normal": math.sqrt(math.pi / 3.0),
}

_NAMED = {
    "uniform": stats.uniform(),
    "exponential": stats.expon(),
    "normal": stats.norm(),
}


def _upsilon_from_emax(emax_std: float) -> float:
    if not np.isfinite(emax_std) or emax_std <= 0:
        raise ArithmeticError("E[max(Z1, Z2)] must be finite and positive")
    return 1.0 / (SQRT3 * emax_std)


def upsilon0(base, numeric: bool = False) -> float:
    """Rank-loss factor (√3 E[max(Z1, Z2)])^{-1} for standardized Z ~ base.

    ``base`` may be a family name ("uniform", "exponential", "normal"), a frozen
    scipy distribution (quadrature) or a 1-d array of samples (empirical).
    Named families use their closed form unless ``numeric`` is set.
    """
    if isinstance(base, str):
        if not numeric:
            try:
                return UPSILON0_CLOSED[base]
            except KeyError:
                raise ValueError(f"no closed form for {base!r}") from None
        base = _NAMED[base]
    if isinstance(base, np.ndarray) or isinstance(base, (list, tuple)):
        x = np.sort(np.asarray(base, dtype=np.float64))
        if x.size < 2 or not np.all(np.isfinite(x)):
            raise ArithmeticError("need finite samples")
        z = (x - x.mean()) / x.std()
        k = np.arange(1, z.size + 1)
        w = (k / z.size) ** 2 - ((k - 1) / z.size) ** 2
        return _upsilon_from_emax(float(np.dot(z, w)))
    mean, var = base.mean(), base.var()
    if not (np.isfinite(mean) and np.isfinite(var)) or var <= 0:
        raise ArithmeticError("base distribution needs finite mean and positive variance")
    lo, hi = base.support()
    f = lambda x: x * base.pdf(x) * base.cdf(x)
    emax, _ = integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)
    return _upsilon_from_emax((2.0 * emax - mean) / math.sqrt(var))


# ---------------------------------------------------------------------------
# ζ_G and θ_τ

G_MOMENTS = {
    # name: (mean μ(G), scale s(G))
    "point-mass": (1.0, 1.0),
    "triangular": (0.5, 1.0),
}


def zeta_G(beta: float, sigma: float, G: str = "point-mass") -> float:
    """Ratio of rank-test to means-oracle signal thresholds in the convolution model."""
    try:
        mu, s = G_MOMENTS[G]
    except KeyError:
        raise ValueError(f"unknown G {G!r}; choose from {sorted(G_MOMENTS)}") from None
    r_or = rho(beta, sigma)
    if r_or == 0:
        raise ZeroDivisionError("oracle boundary is zero at this (beta, sigma)")
    return math.sqrt(math.pi * (sigma ** 2 + 1.0) * s ** 2 * rho(beta, xi_sigma(sigma))
                     / (6.0 * mu ** 2 * r_or))


EXP_FAMILY_SIGMA0 = {
    "normal": 1.0,
    "exponential": 2.0 / 3.0,
    "uniform": 1.0 / math.sqrt(12.0),
}


def theta_tau(setting: str, tau: float, beta: float, n: int, t: int,
              sigma0: float | None = None, sigma: float | None = None, G: str = "point-mass") -> float:
    """Signal size θ for a relative strength τ (τ = 1 sits on the boundary).

    setting: "exp-family" (needs ``sigma0``), "convolution" (needs ``sigma``)
    or "cauchy".
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    ln = math.log(n)
    if setting == "exp-family":
        if sigma0 is None or sigma0 <= 0:
            raise ValueError("exp-family needs sigma0 > 0")
        return tau * math.sqrt(2.0 * rho(beta, 1.0) * ln / (sigma0 ** 2 * t))
    if setting == "convolution":
        if sigma is None:
            raise ValueError("convolution needs sigma")
        s = G_MOMENTS[G][1]
        return tau / s * math.sqrt(2.0 * rho(beta, sigma) * ln / t)
    if setting == "cauchy":
        return tau * math.pi * math.sqrt(2.0 * rho(beta, 1.0) * ln / (3.0 * t))
    raise ValueError(f"unknown setting {setting!r}")


# ---------------------------------------------------------------------------
# Anomaly characteristics


@dataclass(frozen=True)
class AnomalyCharacteristics:
    mu: float
    sigma_sq: float
    eu: np.ndarray
    eu2: np.ndarray
    eu_se: np.ndarray | None = None
    eu2_se: np.ndarray | None = None


def characteristics_from_moments(eu, eu2, eu_se=None, eu2_se=None) -> AnomalyCharacteristics:
    """μ = 2√3 (mean_j E[U_j] - 1/2) and σ² = (12/t) Σ_j Var(U_j)."""
    eu = np.atleast_1d(np.asarray(eu, dtype=np.float64))
    eu2 = np.atleast_1d(np.asarray(eu2, dtype=np.float64))
    mu = 2.0 * SQRT3 * (eu.mean() - 0.5)
    sigma_sq = 12.0 * np.mean(eu2 - eu ** 2)
    return AnomalyCharacteristics(float(mu), float(sigma_sq), eu, eu2, eu_se, eu2_se)


Sampler = Callable[[np.random.Generator, int], np.ndarray]


def _as_list(s, t):
    return [s] * t if callable(s) else list(s)


def anomaly_characteristics(null_sampler: Sampler | Sequence[Sampler],
                            anomalous_sampler: Sampler | Sequence[Sampler],
                            t: int = 1, mc: int = 100_000,
                            seed: RngSeed | int | None = None) -> AnomalyCharacteristics:
    """Monte-Carlo rank-signal moments, exact in the presence of atoms.

    E[U]  = P(X > Y1) + P(X = Y1)/2
    E[U²] = P(X > max(Y1, Y2)) + P(Y1 < X = Y2) + P(X = Y1 = Y2)/3
    with X anomalous and Y1, Y2 null. Each moment uses its own fresh draws.
    """
    if mc < 10_000:
        raise ValueError("mc must be at least 10^4")
    nulls, anoms = _as_list(null_sampler, t), _as_list(anomalous_sampler, t)
    if len(nulls) != t or len(anoms) != t:
        raise ValueError("need one sampler per column")
    base = as_seed(seed).child(MOMENTS)
    eu, eu2, se1, se2 = (np.empty(t) for _ in range(4))
    for j in range(t):
        rng = base.child(j).generator()
        x, y1 = anoms[j](rng, mc), nulls[j](rng, mc)
        a = (x > y1) + 0.5 * (x == y1)
        x, y1, y2 = anoms[j](rng, mc), nulls[j](rng, mc), nulls[j](rng, mc)
        b = ((x > y1) & (x > y2)) + ((y1 < x) & (x == y2)) + ((x == y1) & (x == y2)) / 3.0
        eu[j], eu2[j] = a.mean(), b.mean()
        se1[j], se2[j] = a.std(ddof=1) / math.sqrt(mc), b.std(ddof=1) / math.sqrt(mc)
    return characteristics_from_moments(eu, eu2, se1, se2)


# ---------------------------------------------------------------------------
# Boundary algebra and finite-sample bounds


def check_boundary_system(gamma, beta, r, q) -> dict:
    """Evaluate the two-inequality system whose feasibility threshold in r is ρ(β, γ).

    (i)  1 - β - (√q - √r)²/γ² > (1 - q)/2
    (ii) 1 - β - (√q - √r)²/γ² > 0
    Vectorized over array arguments.
    """
    g, b, r_, q_ = (np.asarray(v, dtype=np.float64) for v in (gamma, beta, r, q))
    lhs = 1.0 - b - (np.sqrt(q_) - np.sqrt(r_)) ** 2 / g ** 2
    rhs1 = (1.0 - q_) / 2.0
    ok1, ok2 = lhs > rhs1, lhs > 0
    return {"holds": ok1 & ok2, "i": ok1, "ii": ok2, "lhs": lhs, "rhs_i": rhs1, "rhs_ii": 0.0}


def boundary_infimum(beta: float, gamma: float, q_points: int = 200_001, tol: float = 1e-9) -> float:
    """Smallest r for which some q on a uniform grid of (0, 1] satisfies the system.

    Found by bisection on r, each step checking the whole q grid.
    """
    q = np.linspace(0.0, 1.0, q_points)[1:]
    feasible = lambda r: bool(check_boundary_system(gamma, beta, r, q)["holds"].any())
    if feasible(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    if not feasible(hi):
        raise ArithmeticError("system infeasible at r = 1")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def bernstein_pq_bound(q, n: int, t: int):
    """n^{-q + (√6/3) sqrt(q³ ln n / t)}."""
    q = np.asarray(q, dtype=np.float64)
    ln = math.log(n)
    return np.exp(ln * (-q + math.sqrt(6.0) / 3.0 * np.sqrt(q ** 3 * ln / t)))


def pvalue_bound(T: float, k: int) -> float:
    """min(1, k/T² + 1{T <= 0})."""
    if T <= 0:
        return 1.0
    return min(1.0, k / (T * T))
