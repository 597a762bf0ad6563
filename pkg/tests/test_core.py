import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rmt.core import (
    Dataset,
    RngStream,
    TestParams,
    corrupt_count,
    gram,
    sample_gaussian,
    sample_hypergeometric,
    second_moment,
    sum_subset,
    top_singular_pair,
    weighted_sum,
)
from rmt.errors import ArgumentError, ConvergenceError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(max_n=6, max_d=4):
    return st.tuples(st.integers(1, max_n), st.integers(1, max_d)).flatmap(lambda s: arrays(np.float64, s, elements=finite))


# -- dataset and params ------------------------------------------------------


def test_dataset_is_immutable_copy():
    src = np.ones((2, 3))
    ds = Dataset(src)
    src[0, 0] = 5
    assert ds.points[0, 0] == 1
    with pytest.raises(ValueError):
        ds.points[0, 0] = 2


@pytest.mark.parametrize("bad", [np.zeros((0, 3)), np.array([[np.nan, 1.0]]), np.zeros((2, 2, 2))])
def test_dataset_rejects_bad_points(bad):
    with pytest.raises(ArgumentError):
        Dataset(bad)


def test_params_require_eps_at_most_alpha():
    with pytest.raises(ArgumentError):
        TestParams(d=3, n=10, eps=0.5, alpha=0.4)
    assert TestParams(d=3, n=10, eps=0.4, alpha=0.4).n_bad == 4


def test_corrupt_count_floors_representation_error():
    assert corrupt_count(0.29, 100) == 29
    assert corrupt_count(0.05, 19) == 0


# -- sums ----------------------------------------------------------------------


def test_sum_subset_examples():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 2))
    assert np.array_equal(sum_subset(Dataset(x), []), np.zeros(2))
    assert np.array_equal(sum_subset(Dataset(x), [1]), x[1])
    naive = [0.0, 0.0]
    for i in range(3):
        for j in range(2):
            naive[j] += x[i, j]
    assert np.allclose(sum_subset(Dataset(x), [0, 1, 2]), naive, atol=1e-15)


def test_sum_subset_out_of_range():
    with pytest.raises(ArgumentError):
        sum_subset(Dataset(np.ones((2, 2))), [2])


def test_weighted_sum_examples():
    x = Dataset(np.random.default_rng(2).standard_normal((5, 3)))
    full = sum_subset(x, range(5))
    assert np.allclose(weighted_sum(x, np.ones(5)), full)
    assert np.array_equal(weighted_sum(x, np.zeros(5)), np.zeros(3))
    assert np.allclose(weighted_sum(x, np.full(5, 0.25)), 0.5 * full)
    with pytest.raises(ArgumentError):
        weighted_sum(x, np.ones(4))


def test_gram_examples():
    assert np.array_equal(gram(Dataset(np.eye(2)), np.ones(2)), np.eye(2))
    x = np.array([[1.0, 2.0, 2.0]])
    assert np.array_equal(gram(Dataset(x), [1.0]), [[9.0]])
    rng = np.random.default_rng(3)
    y = rng.standard_normal((5, 3))
    w = rng.uniform(size=5)
    naive = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            naive[i, j] = math.sqrt(w[i] * w[j]) * sum(y[i, k] * y[j, k] for k in range(3))
    assert np.allclose(gram(Dataset(y), w), naive, atol=1e-12, rtol=0)


def test_second_moment_examples():
    x = np.array([[1.0, -2.0]])
    assert np.array_equal(second_moment(Dataset(x), [1.0]), np.outer(x[0], x[0]))
    assert np.array_equal(second_moment(Dataset(np.ones((3, 2))), np.zeros(3)), np.zeros((2, 2)))
    rng = np.random.default_rng(4)
    y = rng.standard_normal((4, 4))
    w = rng.uniform(size=4)
    assert abs(np.trace(second_moment(Dataset(y), w)) - sum(w[i] * y[i] @ y[i] for i in range(4))) < 1e-12


@given(matrices(), st.data())
def test_union_sum_expansion(x, data):
    n = x.shape[0]
    labels = data.draw(st.lists(st.sampled_from([0, 1, 2]), min_size=n, max_size=n))
    s = [i for i in range(n) if labels[i] == 1]
    t = [i for i in range(n) if labels[i] == 2]
    ds = Dataset(x)
    a, b = sum_subset(ds, s), sum_subset(ds, t)
    u = sum_subset(ds, s + t)
    assert math.isclose(u @ u, a @ a + b @ b + 2 * a @ b, rel_tol=1e-9, abs_tol=1e-9)


def test_gram_quadratic_form_is_subset_norm_exhaustive():
    x = Dataset(np.random.default_rng(5).standard_normal((6, 3)))
    g = gram(x, np.ones(6))
    for mask in itertools.product([0, 1], repeat=6):
        one = np.array(mask, dtype=float)
        s = sum_subset(x, np.flatnonzero(one))
        assert math.isclose(one @ g @ one, s @ s, rel_tol=1e-12, abs_tol=1e-12)


@given(st.integers(0, 2**32))
def test_gram_and_second_moment_share_spectrum(seed):
    rng = np.random.default_rng(seed)
    x = Dataset(rng.standard_normal((6, 4)))
    w = rng.uniform(size=6)
    g, m = gram(x, w), second_moment(x, w)

    def spectrum(a):
        out = []
        a = a.copy()
        for k in range(4):
            lam, v = top_singular_pair(a, tol=1e-12, max_iter=20000, rng=RngStream(seed, k))
            sign = np.sign(v @ a @ v) or 1.0
            out.append(sign * lam)
            a = a - sign * lam * np.outer(v, v)
        return np.sort(out)

    assert np.allclose(spectrum(g), spectrum(m), atol=1e-8 * max(1.0, np.abs(g).max()))


# -- top_singular_pair -----------------------------------------------------------


def test_top_pair_diagonal():
    lam, v = top_singular_pair(np.diag([3.0, -5.0, 1.0]), rng=RngStream(1))
    assert math.isclose(lam, 5.0, rel_tol=1e-8)
    assert math.isclose(abs(v[1]), 1.0, rel_tol=1e-8)


def test_top_pair_zero_matrix():
    lam, v = top_singular_pair(np.zeros((4, 4)), rng=RngStream(1))
    assert lam == 0.0 and math.isclose(np.linalg.norm(v), 1.0)


def test_top_pair_symmetric_tie():
    lam, v = top_singular_pair(np.diag([2.0, -2.0, 0.5]), rng=RngStream(3))
    assert math.isclose(lam, 2.0, rel_tol=1e-8)
    a = np.diag([2.0, -2.0, 0.5])
    assert np.linalg.norm(a @ v - np.sign(v @ a @ v) * lam * v) < 1e-6


def _squared_power_oracle(a, iters=20000):
    # Top eigenvalue of A^2 by plain power iteration; its square root is max |lambda|.
    b = a @ a
    x = np.ones(a.shape[0]) / math.sqrt(a.shape[0])
    for _ in range(iters):
        y = b @ x
        x = y / np.linalg.norm(y)
    return math.sqrt(x @ b @ x)


def test_top_pair_matches_squared_power_oracle():
    rng = np.random.default_rng(50)
    g = rng.standard_normal((50, 50))
    a = (g + g.T) / 2
    lam, v = top_singular_pair(a, rng=RngStream(50))
    assert math.isclose(lam, _squared_power_oracle(a), rel_tol=1e-6)
    # frozen from the oracle above
    assert math.isclose(lam, 9.792252959195011, rel_tol=1e-6)
    assert np.linalg.norm(a @ v - np.sign(v @ a @ v) * lam * v) <= 1e-8 * np.linalg.norm(a)


def test_top_pair_raises_with_best_iterate():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((30, 30))
    with pytest.raises(ConvergenceError) as info:
        top_singular_pair((g + g.T) / 2, tol=1e-14, max_iter=2, rng=RngStream(0))
    assert info.value.vector.shape == (30,) and info.value.value > 0


def test_top_pair_rejects_asymmetric():
    with pytest.raises(ArgumentError):
        top_singular_pair(np.array([[0.0, 1.0], [0.0, 0.0]]))


# -- sampling and streams --------------------------------------------------------


def test_streams_reproduce_and_differ():
    a = RngStream(7, 1).generator().standard_normal(5)
    b = RngStream(7, 1).generator().standard_normal(5)
    c = RngStream(7, 2).generator().standard_normal(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert RngStream(7).split("x", 3) == RngStream(7).split("x", 3)
    assert RngStream(7).split("x", 3) != RngStream(7).split("x", 4)


def test_sample_gaussian_means():
    n = 10**5
    zero = sample_gaussian(np.zeros(1), n, RngStream(11)).points
    assert abs(zero.mean()) < 4 / math.sqrt(n)
    mu = np.array([0.5, -1.0, 2.0])
    x = sample_gaussian(mu, n, RngStream(12)).points
    assert np.all(np.abs(x.mean(axis=0) - mu) < 4 / math.sqrt(n))
    assert np.array_equal(sample_gaussian(mu, 10, RngStream(3)).points, sample_gaussian(mu, 10, RngStream(3)).points)


def test_hypergeometric_examples():
    n, k1, k2 = 200, 30, 50
    draws = sample_hypergeometric(n, k1, k2, RngStream(5), size=10**5)
    var = k1 * k2 / n * (1 - k1 / n) * (n - k2) / (n - 1)
    assert abs(draws.mean() - k1 * k2 / n) < 4 * math.sqrt(var / 10**5)
    assert sample_hypergeometric(10, 10, 4, RngStream(1)) == 4
    assert sample_hypergeometric(10, 0, 4, RngStream(1)) == 0
    with pytest.raises(ArgumentError):
        sample_hypergeometric(10, 11, 4, RngStream(1))


def test_hypergeometric_matches_set_intersection():
    rng = np.random.default_rng(9)
    n, k1, k2 = 12, 5, 7
    direct = [len(set(rng.choice(n, k1, replace=False)) & set(rng.choice(n, k2, replace=False))) for _ in range(20000)]
    lib = sample_hypergeometric(n, k1, k2, RngStream(9), size=20000)
    for y in range(0, 6):
        assert abs(np.mean(np.array(direct) == y) - np.mean(lib == y)) < 0.02


def test_hypergeometric_tail_bound():
    n, eps = 1000, 0.1
    k = corrupt_count(eps, n)
    draws = sample_hypergeometric(n, k, k, RngStream(21), size=10**5) / n
    for t in (0.002, 0.004, 0.006, 0.008, 0.01):
        bound = math.exp(-min(t * t * n / (4 * eps * eps), t * n / 4))
        assert np.mean(draws - eps * eps > t) <= 3 * bound
