import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmt.contamination import Hypothesis, gen_clean, gen_oblivious_negmu
from rmt.core import Dataset, RngStream, TestParams, corrupt_count
from rmt.errors import ArgumentError, CapacityError
from oracles import balanced_violated
from rmt.friendly_filter import (
    AccessLog,
    BalancedParams,
    Exact,
    FilterSet,
    PipelineConfig,
    Randomized,
    apply_filter,
    check_balanced,
    check_friendly,
    default_split_probability,
    friendly_pipeline,
    full_sample_splitting,
    prefilter_norms_pairs,
    prefilter_thresholds,
    single_filtering_iteration,
    splitting_schedule,
    witness_compression,
)


# -- check_friendly ----------------------------------------------------------------


def test_friendly_orthogonal_rows():
    d = 16
    x = math.sqrt(d) * np.eye(d)[:8]
    rep = check_friendly(Dataset(x), eps=0.25, kappa=0.0)
    assert rep.clauses == (True, True, True) and rep.ok


def test_friendly_norm_violation_points_at_doubled_row():
    d = 16
    x = np.zeros((4, d))
    x[0, 0] = 4.0
    x[1] = 2 * x[0]
    x[2, 1] = 4.0
    x[3, 2] = 4.0
    rep = check_friendly(Dataset(x), eps=0.25, kappa=3.0)
    assert not rep.clauses[2] and rep.worst_norm[0] == 1


def test_friendly_exact_and_randomized_agree_on_gaussian():
    x = np.random.default_rng(0).standard_normal((12, 64))
    ex = check_friendly(Dataset(x), 0.25, 20.0, Exact())
    rnd = check_friendly(Dataset(x), 0.25, 20.0, Randomized(10_000), rng=RngStream(1))
    assert ex.ok and rnd.ok


def test_friendly_exact_capacity():
    with pytest.raises(CapacityError):
        check_friendly(Dataset(np.ones((17, 2))), 0.1, 1.0, Exact())


def test_randomized_is_sound_and_finds_planted_pair():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((40, 64))
    x[5] = x[17] = 8.0 * np.eye(64)[0]
    rep = check_friendly(Dataset(x), 0.05, 1.0, Randomized(200), rng=RngStream(2))
    assert not rep.clauses[0]
    w = rep.worst_pair
    direct = float(x[list(w.s1)].sum(axis=0) @ x[list(w.s2)].sum(axis=0))
    assert math.isclose(direct, w.value, rel_tol=1e-9) and abs(direct) > w.bound


# -- check_balanced ----------------------------------------------------------------


def test_balanced_orthogonal_points():
    assert check_balanced(Dataset(np.eye(2) * 3), BalancedParams(0.5, 1, 1)) is None


def test_balanced_duplicate_point():
    d = 9
    x = np.zeros((2, d))
    x[:, 0] = 3.0
    assert check_balanced(Dataset(x), BalancedParams(d - 1, 1, 1)) == ((0,), (1,))


@given(st.integers(2, 8), st.integers(1, 6), st.integers(0, 2**31))
def test_balanced_exact_matches_brute_force(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    m = int(rng.integers(1, n + 1))
    k = int(rng.integers(1, m * m + 1))
    lam = float(rng.uniform(0.05, 3.0))
    assert (check_balanced(Dataset(x), BalancedParams(lam, m, k)) is not None) == balanced_violated(x, lam, m, k)


def test_balanced_gaussian_grid_matches_brute_force():
    x = np.random.default_rng(10).standard_normal((10, 32))
    for lam in (100 * e * 10 for e in (0.01, 0.02, 0.05, 0.1)):
        p = BalancedParams(lam / 100, 2, 4)
        assert (check_balanced(Dataset(x), p) is not None) == balanced_violated(x, p.lam, 2, 4)


def test_balanced_params_validation():
    with pytest.raises(ArgumentError):
        BalancedParams(1.0, 2, 5)
    with pytest.raises(ArgumentError):
        check_balanced(Dataset(np.ones((2, 2))), BalancedParams(1.0, 3, 1))


# -- Filter_gamma ----------------------------------------------------------------


def test_apply_filter_hand_example():
    x = Dataset(np.array([[2.0, 0.0], [1.0, 0.0], [0.0, 3.0]]))
    assert apply_filter(x, FilterSet(((0,),), 1.5), x).tolist() == [1, 2]


def test_apply_filter_extremes():
    x = Dataset(np.random.default_rng(1).standard_normal((6, 3)))
    f_big = FilterSet(((0, 1),), 1e9)
    assert apply_filter(x, f_big, x).tolist() == list(range(6))
    assert apply_filter(x, FilterSet(((0, 1),), 0.0), x).size == 0
    assert apply_filter(x, FilterSet((), 0.0), x).tolist() == list(range(6))


def test_filter_set_validation_and_json():
    with pytest.raises(ArgumentError):
        FilterSet(((),), 1.0)
    f = FilterSet(((0, 2), (1,)), 2.5)
    assert FilterSet.from_json(f.to_json()) == f


@given(st.integers(0, 2**31), st.floats(0.1, 3.0))
def test_apply_filter_idempotent(seed, gamma):
    rng = np.random.default_rng(seed)
    ref = Dataset(rng.standard_normal((5, 4)))
    x = rng.standard_normal((20, 4))
    f = FilterSet(((0,), (1, 2)), gamma)
    keep = apply_filter(Dataset(x), f, ref)
    if keep.size:
        again = apply_filter(Dataset(x[keep]), f, ref)
        assert again.tolist() == list(range(keep.size))


# -- single iteration --------------------------------------------------------------


def test_single_iteration_balanced_data_keeps_b():
    x = 4.0 * np.eye(16)[:10]
    res = single_filtering_iteration(Dataset(x), lam=4.0, m=2, k=2, s=2, p=0.5, rng=RngStream(1))
    assert res.filters.directions == ()
    assert np.array_equal(np.sort(np.concatenate([res.survivors, res.held_out])), np.arange(10))


def _planted(seed):
    d = 64
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((12, d))
    cluster = [0, 3, 6, 9]
    u = np.eye(d)[0]
    x[cluster] = math.sqrt(d) * u + 0.05 * rng.standard_normal((4, d))
    return x, cluster


def test_single_iteration_removes_planted_cluster_from_b():
    hits = 0
    for seed in range(40):
        x, cluster = _planted(seed)
        res = single_filtering_iteration(Dataset(x), lam=64.0, m=16, k=2, s=2, p=0.5, rng=RngStream(seed))
        in_a = set(res.held_out.tolist()) & set(cluster)
        if len(in_a) < 2:
            continue
        hits += 1
        b_cluster = set(cluster) - in_a
        assert b_cluster <= set(res.removed.tolist())
        assert set(res.removed.tolist()) <= set(cluster)
    assert hits >= 5


def test_single_iteration_never_reads_b_while_searching():
    x, _ = _planted(2)
    log = AccessLog()
    res = single_filtering_iteration(Dataset(x), lam=64.0, m=16, k=2, s=2, p=0.5, rng=RngStream(2), log=log)
    b = set(range(12)) - set(res.held_out.tolist())
    assert not (log.rows("search") & b)
    assert log.rows("apply") == b


def test_single_iteration_removes_no_good_points():
    p = TestParams(d=128, n=200, eps=0.05, alpha=0.3)
    m = corrupt_count(p.eps, p.n)
    lam = min(p.d, 9.0 * m)
    for t in range(100):
        ld = gen_oblivious_negmu(p, rng=RngStream(t))
        res = single_filtering_iteration(ld.data, lam, m, 2 * m, 4, default_split_probability(m), RngStream(t, 1))
        assert not np.any(~ld.bad_mask[res.removed])


# -- full splitting ---------------------------------------------------------------


def test_full_splitting_keeps_clean_data():
    # at lam = 9 eps n clean Gaussians already fail the randomized check
    # (ratio about 1.3), so the self-consistency is exercised at lam = 400
    p = TestParams(d=512, n=200, eps=0.05, alpha=0.3)
    m = corrupt_count(p.eps, p.n)
    lam = 400.0
    whole = 0
    for t in range(50):
        x = gen_clean(p, Hypothesis.NULL, rng=RngStream(t)).data
        res = full_sample_splitting(x, lam, m, 1e-3, RngStream(t, 1), discard_split=False)
        whole += res.survivors.size == p.n
        if t < 3:
            assert check_balanced(x.subset(res.survivors), BalancedParams(lam, m, m * m), Randomized(300), RngStream(t, 2)) is None
    assert whole >= 0.95 * 50


def test_schedule_shape_and_delta_monotonicity():
    sched = splitting_schedule(200, 10, 1e-3)
    ks = [k for k, _ in sched]
    assert ks == sorted(ks) and max(ks) <= 100
    assert splitting_schedule(200, 10, 1e-6)[0][0] >= sched[0][0]
    assert 0 < default_split_probability(10) < 1


# -- compression ----------------------------------------------------------------


def test_compression_planted_spike():
    d = 64
    rng = np.random.default_rng(4)
    x = 0.1 * rng.standard_normal((20, d)) + np.eye(d)[0] * math.sqrt(d)
    s1, s2 = list(range(10)), list(range(10, 20))
    rows, count = witness_compression(Dataset(x), s1, s2, theta=1.0, lam=1.0, C=1.0, m=10, rng=RngStream(1))
    assert count == 10
    assert len(rows) <= math.ceil(10 * 10 / 10) and set(rows) <= set(s1)


def test_compression_size_bound_and_degenerate_case():
    d = 32
    rng = np.random.default_rng(5)
    x = rng.standard_normal((30, d)) + 2.0 * np.eye(d)[0]
    s1, s2 = list(range(12)), list(range(12, 18))
    rows, _ = witness_compression(Dataset(x), s1, s2, theta=0.5, lam=1.0, C=4.0, m=12, rng=RngStream(1))
    assert len(rows) <= math.ceil(12 * 6 / (4 * 12))
    rows, _ = witness_compression(Dataset(x), s1, s2, theta=0.5, lam=1.0, C=1.0, m=6, rng=RngStream(1))
    assert sorted(rows) == s1


def test_compression_precondition():
    x = np.eye(4)
    with pytest.raises(ArgumentError):
        witness_compression(Dataset(x), [0], [1], theta=1.0, lam=1.0, C=1.0)


# -- prefilter and pipeline -------------------------------------------------------


def test_prefilter_clean_data_untouched():
    n, d = 500, 400
    big_l = math.log(n * 1e3)
    norm_dev, pair_bound = 10 * math.sqrt(d * big_l), 10 * math.sqrt(d) * big_l
    clean = 0
    for t in range(100):
        x = RngStream(t).generator().standard_normal((n, d))
        clean += prefilter_norms_pairs(Dataset(x), norm_dev, pair_bound).size == n
    assert clean >= 99


def test_prefilter_zero_row_and_duplicates():
    d = 25
    x = np.random.default_rng(0).standard_normal((6, d))
    x[2] = 0.0
    assert 2 not in prefilter_norms_pairs(Dataset(x), d / 2, 1e9)
    y = np.random.default_rng(1).standard_normal((6, d))
    y[4] = y[1] = np.eye(d)[0] * 5.0
    kept = prefilter_norms_pairs(Dataset(y), 1e9, d - 1.0)
    assert 1 not in kept and 4 not in kept


def test_prefilter_thresholds_formula():
    nd, pb = prefilter_thresholds(100, 64, 0.01)
    big_l = math.log(100 / 0.01)
    assert math.isclose(nd, 10 * (8 * math.sqrt(big_l) + big_l)) and math.isclose(pb, 80 * big_l)


def test_pipeline_removes_little_clean_data():
    p = TestParams(d=128, n=200, eps=0.05, alpha=0.3)
    ok = 0
    for t in range(40):
        x = gen_clean(p, Hypothesis.NULL, rng=RngStream(t)).data
        res = friendly_pipeline(x, p.eps, RngStream(t, 1), PipelineConfig())
        ok += res.removed.size <= 2 * corrupt_count(p.eps, p.n)
    assert ok >= 0.95 * 40
