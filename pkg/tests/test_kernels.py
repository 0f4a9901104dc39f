import numpy as np
import pytest
from hypothesis import given, strategies as st

from rankhc import _kernels
from rankhc.calibration import tabulate_null
from rankhc.hc import v_constants
from rankhc.rng import fisher_yates_draws

BACKENDS = _kernels.available()
needs_numba = pytest.mark.skipif("numba" not in BACKENDS, reason="numba not installed")


def _reference_sums(cols, draws):
    n, t = cols.shape
    out = np.zeros((draws.shape[0], n), dtype=cols.dtype)
    for r in range(draws.shape[0]):
        for j in range(t):
            perm = list(range(n))
            for k in range(n - 1):
                i = n - 1 - k
                s = draws[r, j, k]
                perm[i], perm[s] = perm[s], perm[i]
            out[r] += cols[perm, j]
    return out


@pytest.mark.parametrize("backend", BACKENDS)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(1, 6), st.integers(0, 10**6))
def test_permuted_sums_match_reference(backend, n, t, m, seed):
    rng = np.random.default_rng(seed)
    cols = rng.integers(-50, 50, size=(n, t)).astype(np.int64)
    draws = fisher_yates_draws(rng, (m, t), n)
    assert np.array_equal(_kernels.get(backend).permuted_sums(cols, draws), _reference_sums(cols, draws))


@needs_numba
@given(st.integers(2, 40), st.integers(1, 5), st.integers(1, 8), st.integers(0, 10**6))
def test_backends_bit_identical(n, t, m, seed):
    rng = np.random.default_rng(seed)
    draws = fisher_yates_draws(rng, (m, t), n)
    a, b = _kernels.get("numba"), _kernels.get("numpy")
    for cols in (rng.normal(size=(n, t)) * 1e3, rng.integers(0, 2 * n, size=(n, t))):
        assert np.array_equal(a.permuted_sums(cols, draws), b.permuted_sums(cols, draws))
    K = int(rng.integers(1, 30))
    cls = rng.integers(0, K + 1, size=(m, n))
    p = np.sort(np.where(rng.random(K) < 0.3, 0.0, rng.random(K)))[::-1]
    npq, den = v_constants(p, n)
    va, vb = a.tail_max_dense(cls, npq, den), b.tail_max_dense(cls, npq, den)
    assert va.tobytes() == vb.tobytes()


@needs_numba
def test_tables_identical_across_backends():
    ta = tabulate_null(30, 3, mc_pq=500, mc_t=500, seed=4, backend="numba")
    tb = tabulate_null(30, 3, mc_pq=500, mc_t=500, seed=4, backend="numpy")
    assert ta.checksum() == tb.checksum()


def test_tables_independent_of_threads():
    ta = tabulate_null(400, 7, mc_pq=2000, mc_t=2000, seed=4, threads=1)
    tb = tabulate_null(400, 7, mc_pq=2000, mc_t=2000, seed=4, threads=3)
    assert ta.checksum() == tb.checksum()


def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setenv("RANKHC_BACKEND", "numpy")
    assert _kernels.get().NAME == "numpy"
    monkeypatch.setenv("RANKHC_BACKEND", "fortran")
    with pytest.raises(ValueError):
        _kernels.get()
