import numpy as np
import pytest
from hypothesis import given, strategies as st

from rankhc.rng import RngSeed, as_seed, fisher_yates_draws


def test_same_seed_same_stream():
    a = RngSeed(7).child(1, 2).generator().random(5)
    b = RngSeed(7).child(1, 2).generator().random(5)
    assert np.array_equal(a, b)


def test_children_are_distinct():
    a = RngSeed(7).child(1).generator().random(5)
    b = RngSeed(7).child(2).generator().random(5)
    c = RngSeed(8).child(1).generator().random(5)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_seed_required_and_range():
    with pytest.raises(ValueError):
        as_seed(None)
    with pytest.raises(ValueError):
        RngSeed(-1)
    assert as_seed(3) == RngSeed(3)


def test_json_roundtrip():
    s = RngSeed(2**63 + 5, (1, 4))
    assert RngSeed.from_json(s.to_json()) == s


@given(st.integers(2, 40))
def test_fisher_yates_ranges(n):
    d = fisher_yates_draws(np.random.default_rng(0), (50,), n)
    assert d.shape == (50, n - 1)
    high = np.arange(n, 1, -1)
    assert np.all(d >= 0) and np.all(d < high)
