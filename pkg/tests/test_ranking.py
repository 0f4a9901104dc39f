import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from rankhc.data import ObservationMatrix
from rankhc.ranking import (MIDRANK, RANDOM_TIES, RankMatrix, column_permute, compute_ranks,
                            has_ties, null_cdf_transform)
from rankhc.rng import RngSeed


@pytest.mark.parametrize("policy", [RANDOM_TIES, MIDRANK])
def test_distinct_values(policy):
    r = compute_ranks(ObservationMatrix([[10.0], [30.0], [20.0]]), policy, seed=1)
    assert r.ranks[:, 0].tolist() == [1, 3, 2]


def test_midrank_example():
    r = compute_ranks(ObservationMatrix([[5.0], [5.0], [7.0]]), MIDRANK)
    assert r.ranks[:, 0].tolist() == [1.5, 1.5, 3.0]


def test_random_ties_two_outcomes_equally_likely():
    m = ObservationMatrix([[5.0], [5.0], [7.0]])
    counts = Counter(tuple(compute_ranks(m, RANDOM_TIES, RngSeed(3).child(i)).ranks[:, 0])
                     for i in range(10_000))
    assert set(counts) == {(1.0, 2.0, 3.0), (2.0, 1.0, 3.0)}
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


def test_random_ties_requires_seed_only_with_ties():
    compute_ranks(ObservationMatrix([[1.0], [2.0]]), RANDOM_TIES)  # no seed needed
    with pytest.raises(ValueError):
        compute_ranks(ObservationMatrix([[1.0], [1.0]]), RANDOM_TIES)


def test_column_permute_degenerate():
    r = RankMatrix(np.array([[1.0, 1.0]]))
    assert column_permute(r, 5) == r


def test_column_permute_uniform_on_s3():
    r = RankMatrix(np.array([[1.0], [2.0], [3.0]]))
    draws = 60_000
    counts = Counter(tuple(column_permute(r, RngSeed(11).child(i)).ranks[:, 0]) for i in range(draws))
    assert len(counts) == 6
    sd = np.sqrt(draws * (1 / 6) * (5 / 6))
    for c in counts.values():
        assert abs(c - draws / 6) <= 3 * sd


small_cols = arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 3)),
                    elements=st.sampled_from([0.0, 1.0, 2.0, 3.5]))


@given(small_cols, st.integers(0, 2**32))
def test_rank_invariants(x, seed):
    n = x.shape[0]
    r = compute_ranks(x, RANDOM_TIES, seed).ranks
    mr = compute_ranks(x, MIDRANK).ranks
    assert np.all(np.sort(r, axis=0) == np.arange(1, n + 1)[:, None])
    assert np.allclose(mr.sum(axis=0), n * (n + 1) / 2)
    for j in range(x.shape[1]):
        bigger = x[:, j][:, None] > x[:, j][None, :]
        for rr in (r[:, j], mr[:, j]):
            assert np.all((rr[:, None] > rr[None, :])[bigger])


@given(small_cols, st.integers(0, 2**32))
def test_column_permute_preserves_multisets(x, seed):
    r = compute_ranks(x, MIDRANK)
    p = column_permute(r, seed)
    assert np.array_equal(np.sort(p.ranks, axis=0), np.sort(r.ranks, axis=0))


@given(arrays(np.float64, st.integers(2, 7), elements=st.sampled_from([0.0, 1.0, 2.0])))
def test_midrank_is_expected_random_rank(col):
    # Enumerate every ordering of each tie group (groups have at most 5 members
    # here when the column is short enough; skip larger ones).
    groups = [np.flatnonzero(col == v) for v in np.unique(col)]
    if max(len(g) for g in groups) > 5:
        return
    base = np.empty(col.size)
    start = 0
    per_group = []
    for g in groups:
        per_group.append([(g, start + 1 + np.array(p)) for p in itertools.permutations(range(len(g)))])
        start += len(g)
    total = np.zeros(col.size)
    count = 0
    for combo in itertools.product(*per_group):
        for g, ranks in combo:
            base[g] = ranks
        total += base
        count += 1
    expected = total / count
    assert np.allclose(compute_ranks(col[:, None], MIDRANK).ranks[:, 0], expected, atol=1e-12)


def test_no_ties_seed_irrelevant(rng):
    x = rng.normal(size=(50, 4))
    assert not has_ties(x)
    assert compute_ranks(x, RANDOM_TIES, 1) == compute_ranks(x, RANDOM_TIES, 2)
    assert np.array_equal(compute_ranks(x, RANDOM_TIES, 1).ranks, compute_ranks(x, MIDRANK).ranks)


def test_cdf_transform_examples():
    u = null_cdf_transform(np.array([[0.0, 0.3]]).T, stats.norm.cdf)
    assert u[0, 0] == 0.5
    x = np.array([[0.1, 0.7, 0.25]]).T
    assert np.array_equal(null_cdf_transform(x, stats.uniform.cdf), x)


def test_cdf_transform_rejects_bad_cdf():
    with pytest.raises(ValueError):
        null_cdf_transform(np.ones((3, 1)), lambda v: 2 * np.ones_like(v))


@pytest.mark.parametrize("dist", [stats.norm(), stats.expon(), stats.poisson(2.5), stats.binom(3, 0.4)])
def test_cdf_transform_uniform_under_null(dist):
    x = dist.rvs(size=(10_000, 1), random_state=np.random.default_rng(4))
    u = null_cdf_transform(x, dist.cdf, seed=9)
    assert stats.kstest(u[:, 0], "uniform").pvalue > 1e-3


def test_ranks_of_transform_match_ranks_of_data(rng):
    x = rng.standard_cauchy(size=(200, 3))
    u = null_cdf_transform(x, stats.cauchy.cdf)
    assert compute_ranks(x, RANDOM_TIES, 1) == compute_ranks(u, RANDOM_TIES, 1)
