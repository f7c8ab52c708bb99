"""Unshuffling pipeline and brute-force oracles.

The pipeline has three stages:

1. estimate the union support from the channel sum, which no cross-channel
   shuffle can change;
2. fit every channel on the selected columns with an MM-estimator on the
   stacked block-diagonal design, so shuffled samples act as outliers;
3. alternately reassign each row's samples to the channels that fit them
   best and refit, keeping the iterate with the smallest residual sum of
   squares.

The oracles enumerate every shuffle (or every sparse support) of a tiny
instance, checking uniqueness claims exactly rather than statistically.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Dictionary
from .exceptions import EnumerationCapError
from .rfrp import check_kxk_rfrp
from .robust_fit import MmConfig, mm_estimate, stacked_design
from .signal_model import ChannelShuffle, as_signal, identity_shuffle, vec
from .sparse_support import StabilityConfig, SupportEstimate, channel_sum, stability_select

__all__ = [
    "OracleResult",
    "PipelineConfig",
    "PipelineWarning",
    "RecoveryResult",
    "brute_force_oracle",
    "fit_channels",
    "oracle_support_uniqueness",
    "reassign_rows",
    "run_pipeline",
]

MAX_ENUM_CHANNELS = 6
ORACLE_CAP = 10**7
SUPPORT_CAP = 10**6
MEMBERSHIP_RTOL = 1e-8


class PipelineWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Pipeline settings.

    `seed` replaces the seeds of `stability` and `mm`.  With
    ``refit_mode="ls_after_first"`` only the first fit is robust and later
    refits are ordinary least squares.  `rfrp_gate` runs a randomized
    K x K check of the dictionary for the selected support size and warns
    on failure.
    """

    n_outer_iter: int = 5
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    mm: MmConfig = field(default_factory=MmConfig)
    refit_mode: Literal["mm_each_iter", "ls_after_first"] = "mm_each_iter"
    seed: int = 0
    rfrp_gate: bool = False
    rfrp_budget: int = 2000

    def __post_init__(self):
        if self.n_outer_iter < 1:
            raise ValueError("n_outer_iter must be at least 1")
        if self.refit_mode not in ("mm_each_iter", "ls_after_first"):
            raise ValueError(f"unknown refit_mode {self.refit_mode!r}")
        if self.rfrp_budget < 1:
            raise ValueError("rfrp_budget must be positive")


@dataclass(frozen=True)
class RecoveryResult:
    """Output of :func:`run_pipeline`.

    `estimated_shuffle` maps reconstructed channels to observed ones, so
    ``apply_shuffle(reconstructed, estimated_shuffle)`` approximates `y`.
    `channel_relabeling` is the permutation applied to the fitted channels
    so that as many rows as possible are left unshuffled.
    `initial_reconstruction` is the robust fit before any reassignment,
    with the same channel labels.
    """

    reconstructed: np.ndarray
    estimated_shuffle: ChannelShuffle
    support: SupportEstimate
    coefficients: np.ndarray
    rss: float
    per_iteration_rss: list
    channel_relabeling: tuple
    selected_iteration: int
    initial_reconstruction: np.ndarray = field(repr=False, default=None)
    ambiguous: bool = False

    def to_dict(self):
        return {
            "reconstructed": self.reconstructed.tolist(),
            "estimated_shuffle": self.estimated_shuffle.to_list(),
            "support": self.support.to_dict(),
            "coefficients": self.coefficients.tolist(),
            "rss": self.rss,
            "per_iteration_rss": list(self.per_iteration_rss),
            "channel_relabeling": list(self.channel_relabeling),
            "selected_iteration": self.selected_iteration,
            "ambiguous": self.ambiguous,
        }


@dataclass(frozen=True)
class OracleResult:
    """All (signal, shuffle) pairs consistent with an observation."""

    solutions: list
    unique_up_to_relabeling: bool
    n_classes: int
    n_enumerated: int

    def to_dict(self):
        return {
            "unique_up_to_relabeling": self.unique_up_to_relabeling,
            "n_classes": self.n_classes,
            "n_enumerated": self.n_enumerated,
            "solutions": [
                {"signal": x.tolist(), "shuffle": s.to_list()} for x, s in self.solutions
            ],
        }


def _perm_table(m):
    return np.array(list(itertools.permutations(range(m))), dtype=np.intp).reshape(-1, m)


def reassign_rows(y, fitted):
    """Match each row's observed samples to the fitted channels.

    For every row, picks the channel permutation ``pi`` minimizing
    ``sum_m (y[n, pi[m]] - fitted[n, m])**2``.  Up to six channels all
    permutations are enumerated and ties go to the lexicographically
    smallest; beyond that each row is solved as a linear assignment.

    Returns
    -------
    reassigned : ndarray, shape (N, M)
        ``reassigned[n, m] = y[n, pi_n[m]]``.
    shuffle : ChannelShuffle
        Maps `reassigned` back onto `y`, i.e.
        ``apply_shuffle(reassigned, shuffle) == y``.
    """
    y = as_signal(y, "y")
    fitted = as_signal(fitted, "fitted")
    if y.shape != fitted.shape:
        raise ValueError(f"shape mismatch: y {y.shape}, fitted {fitted.shape}")
    n, m = y.shape
    if m <= MAX_ENUM_CHANNELS:
        perms = _perm_table(m)
        cost = ((y[:, perms] - fitted[:, None, :]) ** 2).sum(axis=2)
        pi = perms[np.argmin(cost, axis=1)]
    else:
        pi = np.empty((n, m), dtype=np.intp)
        for r in range(n):
            c = (fitted[r][:, None] - y[r][None, :]) ** 2
            _, cols = linear_sum_assignment(c)
            pi[r] = cols
    reassigned = np.take_along_axis(y, pi, axis=1)
    return reassigned, ChannelShuffle(np.argsort(pi, axis=1))


def fit_channels(y, E, mm_cfg=MmConfig(), robust=True):
    """Fit every channel of `y` on the columns of `E` jointly.

    Returns the ``(k, M)`` coefficient matrix.  The robust fit runs the
    MM-estimator on ``kron(I_M, E)``; otherwise least squares per channel.
    """
    y = as_signal(y, "y")
    E = np.asarray(E, dtype=float)
    n, m = y.shape
    k = E.shape[1]
    if robust:
        fit = mm_estimate(stacked_design(E, m), vec(y), mm_cfg)
        return fit.coefficients.reshape(k, m, order="F")
    return np.linalg.lstsq(E, y, rcond=None)[0]


def _canonical_labels(shuffle):
    # relabel fitted channels so the largest number of rows is unshuffled
    a = shuffle.assignment
    m = a.shape[1]
    ident = np.arange(m)
    if m > MAX_ENUM_CHANNELS:
        return tuple(range(m))
    best, best_count = None, -1
    for p in itertools.permutations(range(m)):
        inv = np.argsort(p)
        count = int(np.sum(np.all(inv[a] == ident, axis=1)))
        if count > best_count:
            best, best_count = p, count
    return best


def run_pipeline(y, D, cfg=PipelineConfig(), support=None):
    """Recover the unshuffled channels of `y`.

    Parameters
    ----------
    y : array_like, shape (N, M)
        Observed, possibly shuffled, signal.
    D : Dictionary or array_like, shape (N, p)
    cfg : PipelineConfig
    support : SupportEstimate, optional
        Skip support estimation and use this one.

    Returns
    -------
    RecoveryResult
        The iterate with the smallest RSS; iterate 0 is the robust fit
        without any reassignment.
    """
    y = as_signal(y, "y")
    Dm = D.matrix if isinstance(D, Dictionary) else np.asarray(D, dtype=float)
    n, m = y.shape
    if Dm.shape[0] != n:
        raise ValueError(f"dictionary has {Dm.shape[0]} rows, signal has {n}")
    mm_cfg = replace(cfg.mm, seed=cfg.seed)
    if support is None:
        support = stability_select(Dm, channel_sum(y), replace(cfg.stability, seed=cfg.seed))
    E = support.sensing_matrix
    k = E.shape[1]
    if n < m * k:
        warnings.warn(
            f"N={n} is below M*K={m * k}; recovery is not guaranteed", PipelineWarning, stacklevel=2
        )
    if cfg.rfrp_gate:
        rep = check_kxk_rfrp(Dm, min(k, n), budget=cfg.rfrp_budget, seed=cfg.seed)
        if not rep.passed:
            warnings.warn(f"dictionary failed the {k}x{k} rank check", PipelineWarning, stacklevel=2)

    coef = fit_channels(y, E, mm_cfg)
    fitted = E @ coef
    initial = fitted
    shuffle = identity_shuffle(n, m)
    history = [float(np.sum((y - fitted) ** 2))]
    best = (history[0], 0, coef, fitted, shuffle)
    for it in range(1, cfg.n_outer_iter + 1):
        assigned, shuffle = reassign_rows(y, fitted)
        robust = cfg.refit_mode == "mm_each_iter"
        coef = fit_channels(assigned, E, mm_cfg, robust=robust)
        fitted = E @ coef
        rss = float(np.sum((assigned - fitted) ** 2))
        history.append(rss)
        if rss < best[0]:
            best = (rss, it, coef, fitted, shuffle)

    rss, it, coef, fitted, shuffle = best
    perm = _canonical_labels(shuffle)
    inv = np.argsort(perm)
    fitted = fitted[:, list(perm)]
    coef = coef[:, list(perm)]
    shuffle = ChannelShuffle(inv[shuffle.assignment])

    ambiguous = False
    scale = max(np.abs(fitted).max(), np.finfo(float).tiny)
    for i, j in itertools.combinations(range(m), 2):
        if np.max(np.abs(fitted[:, i] - fitted[:, j])) <= 1e-8 * scale:
            ambiguous = True
    if ambiguous:
        warnings.warn(
            "two reconstructed channels coincide; the assignment is not identifiable",
            PipelineWarning,
            stacklevel=2,
        )
    initial = initial[:, list(perm)]
    fitted.setflags(write=False)
    initial.setflags(write=False)
    return RecoveryResult(
        reconstructed=fitted,
        estimated_shuffle=shuffle,
        support=support,
        coefficients=coef,
        rss=rss,
        per_iteration_rss=history,
        channel_relabeling=tuple(int(p) for p in perm),
        selected_iteration=it,
        initial_reconstruction=initial,
        ambiguous=ambiguous,
    )


def _orthonormal_basis(E):
    E = np.asarray(E, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    if E.shape[1] == 0:
        return E
    u, s, _ = np.linalg.svd(E, full_matrices=False)
    r = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 0 else 0
    return u[:, :r]


def _decode_shuffles(codes, n, perms):
    # mixed-radix digits of each code select one permutation per row
    npm = len(perms)
    digits = np.empty((len(codes), n), dtype=np.intp)
    c = codes.copy()
    for r in range(n):
        digits[:, r] = c % npm
        c //= npm
    return perms[digits]


def _same_class(x1, s1, x2, s2, perms):
    for p in perms:
        if np.array_equal(x2, x1[:, p]) and np.array_equal(p[s2], s1):
            return True
    return False


def brute_force_oracle(y, subspaces, cap=ORACLE_CAP):
    """Every (signal, shuffle) pair explaining `y` with channels in the given subspaces.

    A candidate shuffle undoes the observation row by row; it is consistent
    when each resulting channel lies in a distinct subspace (projection
    residual at most ``1e-8`` relative).  Solutions are grouped into classes
    that differ only by a global relabeling of channels.

    Parameters
    ----------
    y : array_like, shape (N, M)
    subspaces : list of array_like
        ``M`` basis matrices with ``N`` rows.
    cap : int
        Largest number of shuffles ``(M!)**N`` to enumerate.

    Raises
    ------
    EnumerationCapError
        If the enumeration is larger than `cap`.
    """
    y = as_signal(y, "y")
    n, m = y.shape
    if len(subspaces) != m:
        raise ValueError(f"need {m} subspaces, got {len(subspaces)}")
    bases = [_orthonormal_basis(E) for E in subspaces]
    for B in bases:
        if B.shape[0] != n:
            raise ValueError("every basis must have N rows")
    perms = _perm_table(m)
    total = len(perms) ** n
    if total > cap:
        raise EnumerationCapError(f"{total} shuffles exceed the cap of {cap}")

    solutions = []
    chunk = 1 << 16
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        A = _decode_shuffles(codes, n, perms)  # (S, N, M) forward shuffles
        # x[n, A[n, j]] = y[n, j]  <=>  x[n, i] = y[n, inv(A)[n, i]]
        X = np.take_along_axis(
            np.broadcast_to(y, A.shape), np.argsort(A, axis=2), axis=2
        )
        norms = np.linalg.norm(X, axis=1)  # (S, M)
        member = np.empty((len(codes), m, m), dtype=bool)
        for ell, B in enumerate(bases):
            resid = X - np.einsum("nr,srm->snm", B, np.einsum("nr,snm->srm", B, X))
            member[:, :, ell] = np.linalg.norm(resid, axis=1) <= MEMBERSHIP_RTOL * np.maximum(
                norms, np.finfo(float).tiny
            ) + (norms == 0)
        ok = np.zeros(len(codes), dtype=bool)
        for p in perms:
            ok |= np.all(member[:, np.arange(m), p], axis=1)
        for i in np.flatnonzero(ok):
            solutions.append((X[i].copy(), ChannelShuffle(A[i])))

    reps = []
    for x, s in solutions:
        if not any(_same_class(x0, s0.assignment, x, s.assignment, perms) for x0, s0 in reps):
            reps.append((x, s))
    return OracleResult(solutions, len(reps) == 1, len(reps), total)


def oracle_support_uniqueness(D, betas, cap=SUPPORT_CAP, max_union=12):
    """Whether ``D @ sum(betas)`` has a unique sparsest representation.

    Every column subset of size at most the support size of the summed
    coefficients is tested for containing the observation in its span
    (relative residual ``1e-8``); uniqueness fails if any subset other than
    the true support does, or the true support is itself rank deficient.

    Raises
    ------
    EnumerationCapError
        If the union of supports exceeds `max_union` or the subset count
        exceeds `cap`.
    """
    Dm = D.matrix if isinstance(D, Dictionary) else np.asarray(D, dtype=float)
    B = np.atleast_2d(np.asarray(betas, dtype=float))
    if B.shape[-1] != Dm.shape[1]:
        B = B.T
    if B.shape[-1] != Dm.shape[1]:
        raise ValueError("coefficient vectors must have one entry per dictionary column")
    union = np.flatnonzero(np.any(B != 0, axis=0))
    if union.size > max_union:
        raise EnumerationCapError(f"union support {union.size} exceeds {max_union}")
    beta = B.sum(axis=0)
    supp = np.flatnonzero(beta)
    s = supp.size
    if s == 0:
        return True
    p = Dm.shape[1]
    n_subsets = sum(math.comb(p, k) for k in range(1, s + 1))
    if n_subsets > cap:
        raise EnumerationCapError(f"{n_subsets} subsets exceed the cap of {cap}")
    target = Dm @ beta
    tnorm = np.linalg.norm(target)
    sv = np.linalg.svd(Dm[:, supp], compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        return False
    for k in range(1, s + 1):
        subsets = np.array(list(itertools.combinations(range(p), k)), dtype=np.intp)
        for lo in range(0, len(subsets), 4096):
            T = subsets[lo : lo + 4096]
            u, sv, _ = np.linalg.svd(Dm[:, T].transpose(1, 0, 2), full_matrices=False)
            keep = sv > 1e-10 * np.maximum(sv[:, :1], np.finfo(float).tiny)
            coeffs = np.einsum("bnk,n->bk", u, target) * keep
            resid = np.linalg.norm(target[None, :] - np.einsum("bnk,bk->bn", u, coeffs), axis=1)
            hits = np.flatnonzero(resid <= MEMBERSHIP_RTOL * tnorm)
            for h in hits:
                if not np.array_equal(T[h], supp):
                    return False
    return True
