import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccus.metrics import best_relabeling, evaluate, r_squared, rows_correct, weighted_accuracy
from ccus.signal_model import ChannelShuffle, ShuffleSpec, apply_shuffle, random_shuffle


def test_r_squared_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 2))
    assert r_squared(x, x) == 1.0
    assert r_squared(x, np.full_like(x, x.mean())) == pytest.approx(0.0, abs=1e-15)
    assert r_squared(x, x[:, ::-1]) == 1.0


def test_r_squared_constant_truth():
    c = np.ones((4, 2))
    assert r_squared(c, c) == 1.0
    with pytest.raises(ValueError):
        r_squared(c, c + 0.1)


def test_r_squared_is_pooled_against_global_mean():
    x = np.array([[0.0, 10.0], [2.0, 12.0]])
    xh = np.array([[1.0, 10.0], [2.0, 12.0]])
    # TSS about the global mean 6: 36 + 16 + 16 + 36
    assert r_squared(x, xh) == pytest.approx(1 - 1 / 104)


def test_wa_examples():
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert weighted_accuracy(x, [False, True]) == pytest.approx(2 / 3)
    assert weighted_accuracy(x, [True, True]) == 1.0
    assert weighted_accuracy(x, [False, False]) == 0.0
    assert weighted_accuracy(np.ones((3, 2)), [False] * 3) == 1.0
    with pytest.raises(ValueError):
        weighted_accuracy(np.ones((3, 3)), [True] * 3)


def test_best_relabeling_examples():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((10, 2))
    assert best_relabeling(x, x) == (0, 1)
    assert best_relabeling(x, x[:, ::-1]) == (1, 0)
    assert best_relabeling(np.zeros((3, 2)), np.zeros((3, 2))) == (0, 1)


@pytest.mark.parametrize("seed", range(10))
def test_best_relabeling_matches_enumeration_m3(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((8, 3))
    xh = rng.standard_normal((8, 3))
    scores = {p: np.sum((x - xh[:, list(p)]) ** 2) for p in itertools.permutations(range(3))}
    assert best_relabeling(x, xh) == min(scores, key=scores.get)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 4))
def test_r_squared_relabeling_invariant(seed, m):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((10, m))
    xh = x + 0.3 * rng.standard_normal((10, m))
    perm = rng.permutation(m)
    assert r_squared(x, xh[:, perm]) == r_squared(x, xh)
    assert r_squared(x, xh) <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_wa_bounded_and_monotone(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((12, 2))
    tie = rng.random(12) < 0.3
    x[tie, 1] = x[tie, 0]
    ok = rng.random(12) < 0.5
    wa = weighted_accuracy(x, ok)
    assert 0.0 <= wa <= 1.0
    for i in np.flatnonzero(~ok):
        ok2 = ok.copy()
        ok2[i] = True
        assert weighted_accuracy(x, ok2) >= wa


def test_equal_rows_do_not_lower_wa():
    x = np.array([[1.0, 1.0], [0.0, 3.0], [2.0, 2.0]])
    assert weighted_accuracy(x, [False, True, False]) == 1.0


def test_rows_correct_and_evaluate():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 2))
    s = random_shuffle(30, 2, ShuffleSpec(0.4, seed=2))
    # estimate that labels channels the other way round and recovers s exactly
    est = ChannelShuffle(1 - s.assignment)
    ok = rows_correct(s, est, (1, 0))
    assert ok.all()
    rep = evaluate(x, x[:, ::-1], s, est)
    assert rep.r_squared == 1.0 and rep.weighted_accuracy == 1.0
    assert rep.relabeling == (1, 0) and rep.n_correct_rows == 30
    wrong = evaluate(x, x[:, ::-1], s, s)
    assert wrong.n_correct_rows == 0 and wrong.weighted_accuracy == 0.0
    # consistency with the shuffle model: the estimate reproduces y
    y = apply_shuffle(x, s)
    np.testing.assert_array_equal(apply_shuffle(x[:, ::-1], est), y)
