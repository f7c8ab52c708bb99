"""Restricted full rank property (RFRP) checks and Kruskal rank.

A tall ``N x k`` basis ``E`` has the K-RFRP when every ``K x k`` row
submatrix has full column rank.  A dictionary ``D`` has the ``K x K``-RFRP
when every ``K x K`` submatrix is nonsingular, and the ``K x k``-RFRP when
every ``K x k`` submatrix (any ``k <= K``) has full column rank.

Small problems are certified by enumerating every row subset; large ones by
uniform random sampling (with replacement).  Randomized checks are reproducible:
chunk ``i`` of the samples is drawn from ``default_rng([seed, i])``, so the
same seed and budget always visit the same submatrices in the same order.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Literal, Optional

import numpy as np

__all__ = [
    "EXHAUSTIVE_CAP",
    "KrankResult",
    "RANK_RTOL",
    "RfrpReport",
    "check_k_rfrp",
    "check_kxk_lower_rfrp",
    "check_kxk_rfrp",
    "is_full_column_rank",
    "krank",
    "numerical_rank",
]

RANK_RTOL = 1e-8
EXHAUSTIVE_CAP = 10**6
_CHUNK = 2048


@dataclass(frozen=True)
class RfrpReport:
    """Outcome of an RFRP check.

    `witness`, present iff the check failed, holds the ``rows`` and ``cols``
    (0-based) of a rank-deficient submatrix and its numerical ``rank``.
    """

    property: Literal["K_RFRP", "KxK_RFRP", "Kxk_RFRP"]
    K: int
    mode: Literal["exhaustive", "randomized"]
    n_submatrices_checked: int
    passed: bool
    witness: Optional[dict] = None

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class KrankResult:
    """Kruskal rank; when `exact` is False, `value` is only a lower bound."""

    value: int
    exact: bool


def _sv_threshold(smax):
    return RANK_RTOL * np.maximum(smax, 1.0)


def numerical_rank(a):
    """Rank of `a` (or of each matrix in a stack) under the RFRP tolerance."""
    s = np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)
    if s.shape[-1] == 0:
        return np.zeros(s.shape[:-1], dtype=int) if s.ndim > 1 else 0
    return np.sum(s > _sv_threshold(s[..., :1]), axis=-1)


def is_full_column_rank(a):
    """Full column rank test: smallest singular value above ``1e-8 * max(s_max, 1)``.

    Works on a single matrix or a stack of shape ``(B, r, c)``.
    """
    a = np.asarray(a, dtype=float)
    r, c = a.shape[-2:]
    if c == 0:
        return np.ones(a.shape[:-2], dtype=bool) if a.ndim > 2 else True
    if c > r:
        return np.zeros(a.shape[:-2], dtype=bool) if a.ndim > 2 else False
    s = np.linalg.svd(a, compute_uv=False)
    return s[..., -1] > _sv_threshold(s[..., 0])


def _random_subsets(rng, n, k, count):
    # argsort of iid uniforms gives a uniform random permutation per row
    return np.sort(rng.random((count, n)).argsort(axis=1)[:, :k], axis=1)


def _first_failure(ok):
    bad = np.flatnonzero(~ok)
    return int(bad[0]) if bad.size else None


def _witness(mat, rows, cols):
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    sub = mat[np.ix_(rows, cols)]
    return {"rows": rows.tolist(), "cols": cols.tolist(), "rank": int(numerical_rank(sub))}


def check_k_rfrp(E, K, mode="exhaustive", budget=10_000, seed=0):
    """Check that every ``K x k`` row submatrix of the basis `E` has rank ``k``.

    Parameters
    ----------
    E : array_like, shape (N, k)
    K : int
        Number of preserved rows, ``k <= K <= N``.
    mode : {"exhaustive", "randomized"}
        Exhaustive enumeration is refused above ``EXHAUSTIVE_CAP`` subsets.
    budget : int
        Number of sampled row subsets in randomized mode.
    seed : int
    """
    E = np.asarray(E, dtype=float)
    if E.ndim != 2:
        raise ValueError("E must be a 2-d matrix")
    n, k = E.shape
    if K > n:
        raise ValueError(f"K={K} exceeds the number of rows N={n}")
    if k > K:
        raise ValueError(f"basis dimension k={k} exceeds K={K}")
    if mode not in ("exhaustive", "randomized"):
        raise ValueError(f"unknown mode {mode!r}")
    cols = np.arange(k)
    checked = 0

    if mode == "exhaustive":
        total = math.comb(n, K)
        if total > EXHAUSTIVE_CAP:
            raise ValueError(
                f"exhaustive check needs C({n},{K})={total} subsets, cap is {EXHAUSTIVE_CAP}"
            )
        combos = itertools.combinations(range(n), K)
        while True:
            block = list(itertools.islice(combos, _CHUNK))
            if not block:
                break
            rows = np.array(block, dtype=np.intp)
            ok = is_full_column_rank(E[rows])
            bad = _first_failure(ok)
            if bad is not None:
                checked += bad + 1
                return RfrpReport("K_RFRP", K, mode, checked, False, _witness(E, rows[bad], cols))
            checked += len(rows)
        return RfrpReport("K_RFRP", K, mode, checked, True)

    for chunk in range(math.ceil(budget / _CHUNK)):
        count = min(_CHUNK, budget - checked)
        rng = np.random.default_rng([seed, chunk])
        rows = _random_subsets(rng, n, K, count)
        ok = is_full_column_rank(E[rows])
        bad = _first_failure(ok)
        if bad is not None:
            checked += bad + 1
            return RfrpReport("K_RFRP", K, mode, checked, False, _witness(E, rows[bad], cols))
        checked += count
    return RfrpReport("K_RFRP", K, mode, checked, True)


def _check_dict_shape(D, K):
    D = np.asarray(D, dtype=float)
    if D.ndim != 2:
        raise ValueError("D must be a 2-d matrix")
    if not 1 <= K <= min(D.shape):
        raise ValueError(f"K={K} must lie in [1, min(N, p)={min(D.shape)}]")
    return D


def check_kxk_rfrp(D, K, budget=10_000, seed=0):
    """Randomized check that sampled ``K x K`` submatrices of `D` are nonsingular."""
    D = _check_dict_shape(D, K)
    n, p = D.shape
    checked = 0
    for chunk in range(math.ceil(budget / _CHUNK)):
        count = min(_CHUNK, budget - checked)
        rng = np.random.default_rng([seed, chunk])
        rows = _random_subsets(rng, n, K, count)
        cols = _random_subsets(rng, p, K, count)
        subs = D[rows[:, :, None], cols[:, None, :]]
        bad = _first_failure(is_full_column_rank(subs))
        if bad is not None:
            checked += bad + 1
            return RfrpReport(
                "KxK_RFRP", K, "randomized", checked, False, _witness(D, rows[bad], cols[bad])
            )
        checked += count
    return RfrpReport("KxK_RFRP", K, "randomized", checked, True)


def kxk_lower_samples(n, p, K, budget, seed=0):
    """Submatrix index sets visited by :func:`check_kxk_lower_rfrp`, in order.

    Each sampled row set of size `K` is paired with one column set of every
    size ``k = 1..K``; the total is truncated to `budget`.  Yields
    ``(rows, cols)`` pairs.
    """
    n_row_sets = math.ceil(budget / K)
    per_chunk = max(1, _CHUNK // K)
    emitted = 0
    for chunk in range(math.ceil(n_row_sets / per_chunk)):
        count = min(per_chunk, n_row_sets - chunk * per_chunk)
        rng = np.random.default_rng([seed, chunk])
        rows = _random_subsets(rng, n, K, count)
        cols = [_random_subsets(rng, p, k, count) for k in range(1, K + 1)]
        for i in range(count):
            for k in range(K):
                if emitted == budget:
                    return
                yield rows[i], cols[k][i]
                emitted += 1


def check_kxk_lower_rfrp(D, K, budget=10_000, seed=0):
    """Randomized check of the ``K x k``-RFRP for all ``k <= K``.

    `budget` counts individual submatrix checks; see :func:`kxk_lower_samples`.
    """
    D = _check_dict_shape(D, K)
    n, p = D.shape
    checked = 0
    for rows, cols in kxk_lower_samples(n, p, K, budget, seed):
        checked += 1
        if not is_full_column_rank(D[np.ix_(rows, cols)]):
            return RfrpReport("Kxk_RFRP", K, "randomized", checked, False, _witness(D, rows, cols))
    return RfrpReport("Kxk_RFRP", K, "randomized", checked, True)


def _columns_independent(D, gram, subsets):
    # Gram eigenvalues screen the clearly well-conditioned subsets cheaply;
    # anything near the threshold is re-decided by an SVD of the columns.
    g = gram[subsets[:, :, None], subsets[:, None, :]]
    ev = np.linalg.eigvalsh(g)
    ok = ev[:, 0] > 1e-10 * np.maximum(ev[:, -1], 1.0)
    unsure = np.flatnonzero(~ok)
    if unsure.size:
        ok[unsure] = is_full_column_rank(D[:, subsets[unsure]].transpose(1, 0, 2))
    return ok


def krank(D, cap=EXHAUSTIVE_CAP, upto=None):
    """Kruskal rank of `D` by exhaustive column-subset enumeration.

    Subset size grows from 1 until a dependent subset appears.  The search
    stops early with ``exact=False`` when a level would need more than `cap`
    subsets, or once the lower bound reaches `upto`.
    """
    D = np.asarray(D, dtype=float)
    n, p = D.shape
    gram = D.T @ D
    top = min(n, p)
    for kappa in range(1, top + 1):
        if upto is not None and kappa - 1 >= upto:
            return KrankResult(kappa - 1, exact=False)
        if math.comb(p, kappa) > cap:
            return KrankResult(kappa - 1, exact=False)
        combos = itertools.combinations(range(p), kappa)
        while True:
            block = list(itertools.islice(combos, 8 * _CHUNK))
            if not block:
                break
            if not np.all(_columns_independent(D, gram, np.array(block, dtype=np.intp))):
                return KrankResult(kappa - 1, exact=True)
    return KrankResult(top, exact=True)
