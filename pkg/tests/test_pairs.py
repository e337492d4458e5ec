import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brm_embed.errors import BatchTooSmall, DimensionMismatch, EmptyPairSet, NotNormalized
from brm_embed.numeric import make_rng
from brm_embed.pairs import (
    EmbeddingBatch,
    PairHistograms,
    bin_nodes,
    cumulative,
    distance_matrix,
    enumerate_pairs,
    soft_histogram,
    soft_histogram_vjp,
)

from conftest import numgrad, unit_rows


def kernel_weights(d, bins):
    """Direct evaluation of max(0, 1 - |d - t_r| / delta) for every node."""
    delta = 2.0 / (bins - 1)
    t = np.array([-1.0 + r * delta for r in range(bins)])
    return np.maximum(0.0, 1.0 - np.abs(d - t) / delta)


def as_set(arr):
    return {tuple(p) for p in arr.tolist()}


def test_enumerate_small_cases():
    p = enumerate_pairs([0, 0, 1])
    assert as_set(p.positives) == {(0, 1)}
    assert as_set(p.negatives) == {(0, 2), (1, 2)}
    p = enumerate_pairs([0, 1, 2, 3])
    assert len(p.positives) == 0
    assert len(p.negatives) == 6
    with pytest.raises(BatchTooSmall):
        enumerate_pairs([3])


def test_enumerate_matches_double_loop():
    labels = make_rng(5).integers(0, 4, size=20)
    pos, neg = set(), set()
    for i in range(20):
        for j in range(i + 1, 20):
            (pos if labels[i] == labels[j] else neg).add((i, j))
    p = enumerate_pairs(labels)
    assert as_set(p.positives) == pos and as_set(p.negatives) == neg


@given(st.lists(st.integers(0, 5), min_size=2, max_size=30))
def test_pairs_partition(labels):
    p = enumerate_pairs(labels)
    pos, neg = as_set(p.positives), as_set(p.negatives)
    n = len(labels)
    assert not pos & neg
    assert pos | neg == set(itertools.combinations(range(n), 2))
    assert all(labels[i] == labels[j] for i, j in pos)


def test_distance_examples():
    e1, e2 = [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]
    d = distance_matrix(np.array([e1, e1, e2, [-1.0, 0.0, 0.0]]))
    assert d[0, 1] == -1.0
    assert d[0, 2] == 0.0
    assert d[0, 3] == 1.0
    with pytest.raises(NotNormalized):
        distance_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))


def test_distance_matrix_properties(rng):
    x = unit_rows(rng, 12, 5)
    d = distance_matrix(EmbeddingBatch(x, np.zeros(12)))
    assert np.array_equal(d, d.T)
    assert np.all(np.abs(d) <= 1.0)
    np.testing.assert_allclose(np.diag(d), -1.0, atol=1e-9)
    dup = distance_matrix(np.repeat(x[:1], 6, axis=0))
    np.testing.assert_allclose(dup, -1.0, atol=1e-9)


@pytest.mark.parametrize("d,expected", [(-0.5, [0.5, 0.5, 0.0]), (0.0, [0.0, 1.0, 0.0]),
                                        (-1.0, [1.0, 0.0, 0.0]), (1.0, [0.0, 0.0, 1.0])])
def test_histogram_three_bins(d, expected):
    np.testing.assert_allclose(soft_histogram([d], 3), expected, atol=1e-15)


def test_histogram_matches_kernel_oracle(rng):
    d = rng.uniform(-1, 1, size=100)
    ref = sum(kernel_weights(v, 10) for v in d) / d.size
    got = soft_histogram(d, 10)
    assert abs(got.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(got, ref, atol=1e-12, rtol=0)


def test_partition_of_unity(rng):
    for bins in (2, 3, 15, 75, 150):
        for d in rng.uniform(-1, 1, size=200):
            w = kernel_weights(d, bins)
            assert abs(w.sum() - 1.0) <= 1e-12
            assert np.count_nonzero(w) <= 2
        np.testing.assert_allclose(bin_nodes(bins)[[0, -1]], [-1.0, 1.0])


@given(st.permutations(list(np.linspace(-1, 1, 13))))
def test_histogram_order_invariant(perm):
    base = soft_histogram(np.linspace(-1, 1, 13), 7)
    np.testing.assert_allclose(soft_histogram(perm, 7), base, atol=1e-15)


def test_histogram_errors():
    with pytest.raises(EmptyPairSet):
        soft_histogram([], 5)
    with pytest.raises(ValueError):
        soft_histogram([0.1], 1)
    with pytest.raises(DimensionMismatch):
        soft_histogram_vjp([0.1], 3, [1.0, 2.0])


def test_vjp_examples():
    assert soft_histogram_vjp([-0.5], 3, [1.0, 0.0, 0.0]) == pytest.approx([-1.0])
    for up in ([1.0, 0.0, 0.0], [0.3, -2.0, 5.0]):
        assert soft_histogram_vjp([0.0], 3, up)[0] == 0.0


def test_vjp_finite_differences(rng):
    bins = 11
    nodes = bin_nodes(bins)
    d = rng.uniform(-1, 1, size=40)
    # keep the stencil away from nodes
    d = d[np.min(np.abs(d[:, None] - nodes[None, :]), axis=1) > 1e-4]
    up = rng.standard_normal(bins)
    num = numgrad(lambda z: float(up @ soft_histogram(z, bins)), d, h=1e-6)
    got = soft_histogram_vjp(d, bins, up)
    assert np.max(np.abs(got - num) / np.maximum(np.abs(num), 1e-6)) <= 1e-5


def test_vjp_constant_upstream_is_zero(rng):
    d = rng.uniform(-1, 1, size=30)
    np.testing.assert_allclose(soft_histogram_vjp(d, 9, np.full(9, 2.5)), 0.0, atol=1e-12)


def test_cumulative_examples():
    np.testing.assert_allclose(cumulative([0.2, 0.3, 0.5]), [0.2, 0.5, 1.0])
    np.testing.assert_array_equal(cumulative([1, 0]), [1, 1])
    np.testing.assert_array_equal(cumulative([0, 0, 1]), [0, 0, 1])


def test_pair_histograms_invariants(rng):
    h = PairHistograms(soft_histogram(rng.uniform(-1, 1, 50), 20),
                       soft_histogram(rng.uniform(-1, 1, 70), 20))
    assert abs(h.h_pos.sum() - 1) <= 1e-12 and abs(h.h_neg.sum() - 1) <= 1e-12
    assert np.all(np.diff(h.cum_neg) >= 0)
    assert abs(h.cum_neg[-1] - 1) <= 1e-12
    assert h.bins == 20
