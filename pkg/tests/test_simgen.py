import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from rankhc import calibration as cal
from rankhc.calibration import TableError
from rankhc.hc import EXTENDED, default_k, make_grid
from rankhc.simgen import (CSV_FIELDS, SETTINGS, SignalSpec, appendix_b_samplers, appendix_c_samplers,
                           appendix_d_fixture, appendix_d_matrices, curves_to_rows, generate,
                           grid_experiment, n_anomalous, power_experiment, stream_length_experiment,
                           uniform_tilt_cdf, uniform_tilt_quantile)
from rankhc.theory import anomaly_characteristics

NULL_CDF = {
    "normal-shift": stats.norm.cdf,
    "exponential-rate": stats.expon(scale=2 / 3).cdf,
    "uniform-tilt": stats.uniform.cdf,
    "convolution-normal": stats.norm.cdf,
    "convolution-triangular": stats.norm.cdf,
    "cauchy-shift": stats.cauchy.cdf,
}


@pytest.fixture(scope="module")
def table_100_3():
    return cal.tabulate_null(100, 3, mc_pq=5000, mc_t=5000, seed=17)


def test_anomalous_count():
    assert n_anomalous(500, 0.85) == 3
    assert n_anomalous(1000, 0.85) == 3
    assert SignalSpec("normal-shift", 1.0, 0.6, 100, 3).size == math.ceil(100 ** 0.4)


def test_spec_validation():
    with pytest.raises(ValueError):
        SignalSpec("laplace-shift", 1.0, 0.7, 100, 3)
    with pytest.raises(ValueError):
        SignalSpec("convolution-normal", 1.0, 0.7, 100, 3)
    with pytest.raises(ValueError):
        SignalSpec("normal-shift", -0.1, 0.7, 100, 3)
    with pytest.raises(ValueError):
        SignalSpec("normal-shift", 1.0, 0.7, 10, 3, n_anom=11)


def test_exponential_rate_must_stay_positive():
    spec = SignalSpec("exponential-rate", 40.0, 0.55, 20, 1)
    assert spec.theta >= 1.5
    with pytest.raises(ValueError):
        generate(spec, 0)


@pytest.mark.parametrize("setting", SETTINGS)
def test_tau_zero_gives_null_rows(setting):
    spec = SignalSpec(setting, 0.0, 0.55, 200, 4, sigma=1.0 if setting.startswith("conv") else None,
                      n_anom=100)
    assert spec.theta == 0.0
    x = np.concatenate([generate(spec, i).values[:100].ravel() for i in range(10)])
    assert stats.kstest(x, NULL_CDF[setting]).pvalue > 1e-3


@given(st.floats(-30, 30))
def test_uniform_tilt_cdf_normalized(theta):
    assert uniform_tilt_cdf(1.0, theta) == pytest.approx(1.0, abs=1e-12)
    assert uniform_tilt_cdf(0.0, theta) == 0.0


@given(st.floats(-10, 10), st.floats(0.001, 0.999))
def test_uniform_tilt_quantile_inverts_cdf(theta, u):
    assert uniform_tilt_cdf(uniform_tilt_quantile(u, theta), theta) == pytest.approx(u, abs=1e-9)


def test_uniform_tilt_series_branch_is_continuous():
    u = np.linspace(0, 1, 11)
    a = uniform_tilt_quantile(u, 0.999e-6)
    b = uniform_tilt_quantile(u, 1.001e-6)
    assert np.max(np.abs(a - b)) < 1e-9


def test_anomalous_mean_matches_shift():
    spec = SignalSpec("normal-shift", 1.5, 0.55, 400, 7, n_anom=50)
    x = generate(spec, 3).values[:spec.size]
    assert abs(x.mean() - spec.theta) <= 3 / math.sqrt(x.size)


def test_generation_is_deterministic_and_null_block_shared():
    spec = SignalSpec("cauchy-shift", 1.0, 0.7, 50, 3)
    a, b = generate(spec, 5), generate(spec, 5)
    assert np.array_equal(a.values, b.values)
    c = generate(SignalSpec("cauchy-shift", 2.0, 0.7, 50, 3), 5)
    s = spec.size
    assert np.array_equal(a.values[s:], c.values[s:])
    assert not np.array_equal(a.values[:s], c.values[:s])


def test_rank_statistic_invariant_to_row_relabeling(rng):
    spec = SignalSpec("normal-shift", 2.0, 0.6, 100, 3)
    tab = cal.tabulate_null(100, 3, mc_pq=2000, mc_t=2000, seed=4)
    m = generate(spec, 1)
    perm = rng.permutation(100)
    a = cal.test_random_ties(m, tab, 0)
    b = cal.test_random_ties(m.with_values(m.values[perm]), tab, 0)
    assert a.statistic == b.statistic and a.p_value == b.p_value


def test_power_experiment_requires_table():
    with pytest.raises(TableError, match=r"n=100, t=3"):
        power_experiment(SignalSpec("normal-shift", 0.0, 0.7, 100, 3), [0.0], trials=100, seed=1)


def test_power_experiment_level_and_output(table_100_3):
    base = SignalSpec("uniform-tilt", 0.0, 0.7, 100, 3)
    curves = power_experiment(base, [0.0], 0.05, 1000, ("rank",), seed=2, tables={(100, 3): table_100_3})
    row = curves["rank"].rows[0]
    assert abs(row["power"] - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / 1000)
    assert row["ci_lo"] <= row["power"] <= row["ci_hi"]
    out = curves_to_rows(curves)
    assert set(CSV_FIELDS) <= set(out[0])


def test_power_experiment_paired_and_reproducible(table_100_3):
    base = SignalSpec("normal-shift", 0.0, 0.6, 100, 3)
    kw = dict(alpha=0.05, trials=100, methods=("rank", "midrank-naive"), seed=9,
              tables={(100, 3): table_100_3})
    a = power_experiment(base, [0.0, 3.0], **kw)
    b = power_experiment(base, [0.0, 3.0], **kw)
    assert a["rank"].rows == b["rank"].rows
    # tie-free continuous data: both rank calibrations coincide
    assert a["rank"].rows == a["midrank-naive"].rows
    assert a["rank"].power[1] >= a["rank"].power[0]


def test_grid_experiment_adaptivity_and_determinism():
    base = SignalSpec("normal-shift", 0.0, 0.6, 100, 3)
    k = default_k(100)
    kw = dict(taus=[1.0, 2.0, 3.0], trials=150, seed=3, table_mc=(3000, 3000))
    a = grid_experiment(base, [1, k], **kw)
    b = grid_experiment(base, [k], **kw)
    assert a[k].rows == b[k].rows
    assert np.any(a[1].power <= a[k].power)


def test_stream_length_experiment_runs():
    out = stream_length_experiment(100, 6, 0.0, [1, 3], trials=100, seed=1, table_mc=(2000, 2000))
    for t, c in out.items():
        assert c.meta["t"] == t and c.meta["n_anomalous"] == 6
        assert c.rows[0]["power"] <= 0.15


# Moment and counterexample fixtures ------------------------------------------


def test_mixture_fixture_moments():
    null, anom, (eu, eu2) = appendix_b_samplers(0.3)
    ch = anomaly_characteristics(null, anom, mc=20_000, seed=1)
    assert abs(ch.eu[0] - eu) <= 4 * ch.eu_se[0]
    assert abs(ch.eu2[0] - eu2) <= 4 * ch.eu2_se[0]


def test_symmetric_fixture_moments():
    null, anom, (eu, eu2) = appendix_c_samplers(7)
    ch = anomaly_characteristics(null, anom, mc=20_000, seed=2)
    assert abs(ch.eu[0] - eu) <= 4 * ch.eu_se[0]
    assert abs(ch.eu2[0] - eu2) <= 4 * ch.eu2_se[0]


def test_counterexample_matrices_share_null_block():
    x1, x2 = appendix_d_matrices(10, 4)
    assert np.array_equal(x1[4:], x2[4:])
    assert x1[0, 1] == 3 and x2[0, 1] == -1
    assert np.array_equal(x1[1:], x2[1:])
    with pytest.raises(ValueError):
        appendix_d_matrices(10, 2)
    with pytest.raises(ValueError):
        appendix_d_matrices(10, 9)


def test_counterexample_small_case_exact():
    f = appendix_d_fixture(10, 4)
    eff = f["effective"]
    assert eff["sum_var"] == Fraction(3, 4)
    assert eff["sum_cov"] == Fraction(3, 2) == 2 * eff["sum_var"]
    assert eff["identity_holds"]


@pytest.mark.parametrize("n,s", [(10, 4), (50, 7), (30, 3), (12, 10)])
def test_counterexample_thresholds(n, s):
    f = appendix_d_fixture(n, s)
    assert f["stated"]["q"] == pytest.approx(3 * (n - s - 1) ** 2 / ((n * n - 1) * math.log(n)), rel=1e-12)
    assert f["q_stated"] == pytest.approx(f["stated"]["q"], rel=1e-12)
    assert f["effective"]["q"] == pytest.approx(f["q_effective"], rel=1e-12)
    assert f["effective"]["identity_holds"]
    # at the lower level every anomalous subject but the first exceeds in both outcomes
    assert not f["stated"]["identity_holds"]
    assert f["stated"]["sum_var"] == Fraction(1, 4) and f["stated"]["sum_cov"] == 0


def test_counterexample_rank_means():
    f = appendix_d_fixture(10, 4)
    assert f["rank_means"][0][:4] == [Fraction(17, 2)] * 4
    assert f["rank_means"][1][:4] == [7, 9, 9, 9]
