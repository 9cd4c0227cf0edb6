import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathtaylor.errors import QueryError
from pathtaylor.indices import (
    CombinedIndex,
    SpatialIndex,
    TemporalIndex,
    enumerate_indices,
    monomial,
    reverse,
    temporal_indices,
    weight,
)

words = st.lists(st.integers(0, 3), max_size=6).map(tuple)


@pytest.mark.parametrize("theta, expected", [((), 0), ((0,), 2), ((1, 2), 2), ((0, 1, 0), 5)])
def test_weight(theta, expected):
    assert weight(theta) == expected
    assert TemporalIndex(theta, 3).weight == expected


def test_reverse_examples():
    assert reverse((1, 2, 0)) == (0, 2, 1)
    assert reverse(()) == ()
    assert str(reverse(TemporalIndex((1, 2, 0), 2))) == "(0,2,1)"


@given(words)
def test_reverse_involution(theta):
    assert reverse(reverse(theta)) == theta
    assert weight(reverse(theta)) == weight(theta)


@given(words)
def test_weight_counts_zeros_twice(theta):
    assert weight(theta) == len(theta) + theta.count(0)


def test_enumerate_m0():
    (only,) = enumerate_indices(0, 2, 1)
    assert only.theta.entries == () and only.ell.order == 0


def test_enumerate_m1_d1_dp1():
    idx = enumerate_indices(1, 1, 1)
    got = {(i.theta.entries, i.ell.entries) for i in idx}
    assert got == {((), (0,)), ((1,), (0,)), ((), (1,))}


def test_enumerate_m2_d2():
    got = [i.theta.entries for i in enumerate_indices(2, 2, 0)]
    assert sorted(got) == sorted([(), (1,), (2,), (0,), (1, 1), (1, 2), (2, 1), (2, 2)])
    assert len(got) == 8


# words of exact weight w: a(w) = d a(w-1) + a(w-2), a(0) = 1, a(1) = d; counts are cumulative
@pytest.mark.parametrize("m, d, count", [(0, 1, 1), (1, 1, 2), (2, 1, 4), (3, 1, 7), (4, 1, 12), (2, 2, 8), (3, 2, 20), (4, 3, 156)])
def test_temporal_counts(m, d, count):
    assert len(temporal_indices(m, d)) == count


@given(st.integers(0, 5), st.integers(1, 3))
def test_counts_follow_recurrence(m, d):
    a = [1, d]
    while len(a) <= m:
        a.append(d * a[-1] + a[-2])
    assert len(temporal_indices(m, d)) == sum(a[: m + 1])


@given(st.integers(0, 4), st.integers(1, 3), st.integers(0, 2))
def test_enumeration_properties(m, d, dp):
    idx = enumerate_indices(m, d, dp)
    keys = [i.sort_key() for i in idx]
    assert keys == sorted(keys)
    assert len(set((i.theta.entries, i.ell.entries) for i in idx)) == len(idx)
    assert all(i.weight <= m for i in idx)
    assert all(all(0 <= e <= d for e in i.theta.entries) for i in idx)


def test_nonzero_filter():
    assert all(0 not in t for t in temporal_indices(4, 2, nonzero=True))
    assert len(temporal_indices(3, 2, nonzero=True)) == 1 + 2 + 4 + 8


@pytest.mark.parametrize("h, ell, expected", [((0.7, -2.0), (0, 0), 1.0), ((2, 3), (1, 2), 18.0), ((0, 5), (1, 0), 0.0)])
def test_monomial(h, ell, expected):
    assert monomial(h, ell) == expected


def test_monomial_dimension_mismatch():
    with pytest.raises(QueryError):
        monomial((1.0, 2.0), (1,))


def test_invalid_entries():
    with pytest.raises((QueryError, ValueError)):
        TemporalIndex((3,), 2)
    with pytest.raises((QueryError, ValueError)):
        SpatialIndex((-1,))


def test_combined_weight_and_str():
    c = CombinedIndex(TemporalIndex((0, 1), 1), SpatialIndex((2,)))
    assert c.weight == 5
    assert str(c) == "theta=(0,1) ell=(2)"
