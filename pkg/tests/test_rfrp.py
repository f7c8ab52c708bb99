import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccus.data import calcium_kernel, make_circulant
from ccus.rfrp import (
    check_k_rfrp,
    check_kxk_lower_rfrp,
    check_kxk_rfrp,
    is_full_column_rank,
    krank,
    kxk_lower_samples,
    numerical_rank,
)


def _rank_oracle(a):
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > 1e-8 * max(s[0], 1.0)))


def test_identity_columns_fail_k_rfrp_with_zero_witness():
    E = np.eye(4)[:, :2]
    rep = check_k_rfrp(E, 2)
    assert not rep.passed
    rows = rep.witness["rows"]
    assert np.all(E[rows] == 0) or _rank_oracle(E[rows]) < 2
    assert rep.witness["rank"] == _rank_oracle(E[rows]) < 2


def test_gaussian_passes_exhaustive_k_rfrp():
    E = np.random.default_rng(0).standard_normal((8, 2))
    rep = check_k_rfrp(E, 3)
    assert rep.passed and rep.witness is None
    # C(8, 3) subsets, each independently confirmed
    assert rep.n_submatrices_checked == 56
    assert all(_rank_oracle(E[list(r)]) == 2 for r in itertools.combinations(range(8), 3))


@pytest.mark.parametrize("rank_deficient", [False, True])
def test_square_basis_single_subset(rank_deficient):
    E = np.random.default_rng(1).standard_normal((3, 3))
    if rank_deficient:
        E[:, 2] = E[:, 0] + E[:, 1]
    rep = check_k_rfrp(E, 3)
    assert rep.n_submatrices_checked == 1
    assert rep.passed is (not rank_deficient)


def test_k_rfrp_argument_errors():
    E = np.ones((4, 2))
    with pytest.raises(ValueError):
        check_k_rfrp(E, 5)
    with pytest.raises(ValueError):
        check_k_rfrp(E, 1)
    with pytest.raises(ValueError):
        check_k_rfrp(np.ones((60, 2)), 10)  # C(60, 10) exceeds the exhaustive cap


def test_randomized_k_rfrp_is_reproducible():
    E = np.random.default_rng(2).standard_normal((60, 3))
    a = check_k_rfrp(E, 10, mode="randomized", budget=5000, seed=4)
    b = check_k_rfrp(E, 10, mode="randomized", budget=5000, seed=4)
    assert a.to_json() == b.to_json()
    assert a.passed and a.n_submatrices_checked == 5000 and a.mode == "randomized"


def test_zero_column_fails_kxk():
    D = np.random.default_rng(3).standard_normal((10, 12))
    D[:, 5] = 0.0
    rep = check_kxk_rfrp(D, 2, budget=10_000, seed=0)
    assert not rep.passed
    assert 5 in rep.witness["cols"]
    sub = D[np.ix_(rep.witness["rows"], rep.witness["cols"])]
    assert _rank_oracle(sub) == rep.witness["rank"] < 2


def test_gaussian_64x128_passes_kxk():
    D = np.random.default_rng(4).standard_normal((64, 128))
    rep = check_kxk_rfrp(D, 10, budget=10_000, seed=0)
    assert rep.passed and rep.n_submatrices_checked == 10_000


# Outcome recorded by running the check on the jittered calcium dictionary
# (N = 121, seed 0, budget 10 000): (K, passed, submatrices checked up to and
# including the first failure).
CALCIUM_KXK = [(1, True, 10_000), (2, False, 45), (3, False, 17), (5, False, 6),
               (10, False, 5), (20, False, 7)]


@pytest.mark.parametrize("K,passed,checked", CALCIUM_KXK)
def test_circulant_calcium_dictionary_recorded(K, passed, checked):
    D = make_circulant(calcium_kernel(121, jitter=0.01)).matrix
    rep = check_kxk_rfrp(D, K, budget=10_000, seed=0)
    assert (rep.passed, rep.n_submatrices_checked) == (passed, checked)
    if not passed:
        sub = D[np.ix_(rep.witness["rows"], rep.witness["cols"])]
        assert _rank_oracle(sub) == rep.witness["rank"] < K


def test_kxk_lower_implies_kxk_on_same_samples():
    D = np.random.default_rng(5).standard_normal((32, 64))
    rep = check_kxk_lower_rfrp(D, 6, budget=6000, seed=1)
    assert rep.passed and rep.n_submatrices_checked == 6000
    square = [(r, c) for r, c in kxk_lower_samples(32, 64, 6, 6000, seed=1) if len(c) == 6]
    assert len(square) == 1000
    assert all(is_full_column_rank(D[np.ix_(r, c)]) for r, c in square)


def test_duplicate_columns_fail_kxk_lower_at_k2():
    D = np.random.default_rng(6).standard_normal((6, 4))
    D[:, 3] = D[:, 1]
    rep = check_kxk_lower_rfrp(D, 2, budget=10_000, seed=0)
    assert not rep.passed
    assert sorted(rep.witness["cols"]) == [1, 3]
    assert rep.witness["rank"] == 1


def test_kxk_shape_errors():
    with pytest.raises(ValueError):
        check_kxk_rfrp(np.ones((3, 5)), 4)
    with pytest.raises(ValueError):
        check_kxk_lower_rfrp(np.ones((3, 5)), 0)


def test_krank_examples():
    assert krank(np.eye(5)).value == 5
    D = np.random.default_rng(7).standard_normal((4, 6))
    D[:, 4] = D[:, 2]
    res = krank(D)
    assert (res.value, res.exact) == (1, True)
    G = np.random.default_rng(8).standard_normal((6, 10))
    oracle = max(
        k for k in range(1, 7)
        if all(_rank_oracle(G[:, list(c)]) == k for c in itertools.combinations(range(10), k))
    )
    assert oracle == 6
    assert krank(G).value == 6


def test_krank_cap_reports_lower_bound():
    res = krank(np.random.default_rng(9).standard_normal((8, 30)), cap=500)
    # C(30, 2) = 435 fits, C(30, 3) = 4060 does not
    assert (res.value, res.exact) == (2, False)


def test_numerical_rank_stack():
    a = np.stack([np.eye(3), np.diag([1.0, 1.0, 0.0])])
    np.testing.assert_array_equal(numerical_rank(a), [3, 2])
    np.testing.assert_array_equal(is_full_column_rank(a), [True, False])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 8), st.integers(1, 3))
def test_k_rfrp_monotone_in_k(seed, n, k):
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((n, k))
    # force some structure so failures occur too
    E[rng.random(n) < 0.4] = 0.0
    results = [check_k_rfrp(E, K).passed for K in range(k, n + 1)]
    for lo, hi in zip(results, results[1:]):
        assert hi or not lo


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_witness_reverifies_and_reports_reproduce(seed):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((8, 10))
    D[:, rng.integers(10)] = D[:, rng.integers(10)]
    D[rng.integers(8)] = 0.0
    for check in (check_kxk_rfrp, check_kxk_lower_rfrp):
        a = check(D, 3, budget=300, seed=seed)
        assert a.to_json() == check(D, 3, budget=300, seed=seed).to_json()
        if not a.passed:
            sub = D[np.ix_(a.witness["rows"], a.witness["cols"])]
            assert _rank_oracle(sub) == a.witness["rank"] < len(a.witness["cols"])
