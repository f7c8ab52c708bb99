"""Reconstruction and assignment quality, resolving channel-order ambiguity."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .signal_model import ChannelShuffle, as_signal

__all__ = [
    "EvalReport",
    "best_relabeling",
    "evaluate",
    "r_squared",
    "rows_correct",
    "weighted_accuracy",
]

MAX_RELABEL_CHANNELS = 6


@dataclass(frozen=True)
class EvalReport:
    r_squared: float
    weighted_accuracy: float | None
    relabeling: tuple
    n_correct_rows: int

    def to_dict(self):
        d = asdict(self)
        d["relabeling"] = list(self.relabeling)
        return d


def _rss_tss(x_true, x_hat):
    rss = float(np.sum((x_true - x_hat) ** 2))
    tss = float(np.sum((x_true - x_true.mean()) ** 2))
    return rss, tss


def best_relabeling(x_true, x_hat):
    """Channel permutation of `x_hat` that best matches `x_true`.

    Returns ``perm`` such that ``x_hat[:, perm]`` is compared with ``x_true``.
    Permutations are scanned in lexicographic order starting at the identity
    and only a strictly smaller residual replaces the incumbent.
    """
    x_true = as_signal(x_true, "x_true")
    x_hat = as_signal(x_hat, "x_hat")
    if x_true.shape != x_hat.shape:
        raise ValueError("x_true and x_hat must have the same shape")
    m = x_true.shape[1]
    if m > MAX_RELABEL_CHANNELS:
        raise ValueError(f"relabeling search supports at most {MAX_RELABEL_CHANNELS} channels")
    # cost[i, j]: squared error of matching true channel i with estimated channel j
    cost = ((x_true[:, :, None] - x_hat[:, None, :]) ** 2).sum(axis=0)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(m)):
        c = sum(cost[i, j] for i, j in enumerate(perm))
        if c < best_cost:
            best, best_cost = perm, c
    return best


def r_squared(x_true, x_hat):
    """Pooled coefficient of determination after the best relabeling.

    ``1 - RSS / TSS`` with the total sum of squares centered at the global
    mean of `x_true`.

    Raises
    ------
    ValueError
        If `x_true` is constant while the estimate differs from it.
    """
    x_true = as_signal(x_true, "x_true")
    x_hat = as_signal(x_hat, "x_hat")
    perm = best_relabeling(x_true, x_hat)
    rss, tss = _rss_tss(x_true, x_hat[:, list(perm)])
    if rss == 0.0:
        return 1.0
    if tss == 0.0:
        raise ValueError("R^2 undefined: x_true is constant but the estimate differs")
    return 1.0 - rss / tss


def weighted_accuracy(x_true, assignment_correct):
    """Assignment accuracy with each row weighted by ``|x1 - x2|``.

    Parameters
    ----------
    x_true : array_like, shape (N, 2)
    assignment_correct : array_like of bool, shape (N,)

    Returns
    -------
    float
        In [0, 1]; 1 when no row carries weight.
    """
    x_true = as_signal(x_true, "x_true")
    if x_true.shape[1] != 2:
        raise ValueError("weighted accuracy is defined for two channels only")
    ok = np.asarray(assignment_correct, dtype=bool)
    if ok.shape != (x_true.shape[0],):
        raise ValueError("assignment_correct must have one entry per row")
    w = np.abs(x_true[:, 0] - x_true[:, 1])
    total = w.sum()
    if total == 0.0:
        return 1.0
    # zeros in place keep the summation order fixed, so WA is exactly monotone
    return float(np.where(ok, w, 0.0).sum() / total)


def rows_correct(true_shuffle, est_shuffle, relabeling):
    """Per-row agreement of two shuffles after relabeling the estimate.

    `est_shuffle` maps estimated channels to observed ones; estimated
    channel ``relabeling[m]`` plays the role of true channel ``m``.
    """
    if not isinstance(true_shuffle, ChannelShuffle) or not isinstance(est_shuffle, ChannelShuffle):
        raise TypeError("expected ChannelShuffle instances")
    t = true_shuffle.assignment
    e = est_shuffle.assignment
    if t.shape != e.shape:
        raise ValueError("shuffles must have the same shape")
    # y[n, j] = x[n, t[n, j]]; the estimate says y[n, j] = xhat[n, e[n, j]],
    # and xhat channel r corresponds to true channel inv(relabeling)[r]
    inv = np.argsort(np.asarray(relabeling))
    return np.all(inv[e] == t, axis=1)


def evaluate(x_true, x_hat, true_shuffle=None, est_shuffle=None):
    """R^2, relabeling and (for two channels with shuffles given) WA."""
    x_true = as_signal(x_true, "x_true")
    perm = best_relabeling(x_true, x_hat)
    r2 = r_squared(x_true, x_hat)
    wa = None
    n_ok = 0
    if true_shuffle is not None and est_shuffle is not None:
        ok = rows_correct(true_shuffle, est_shuffle, perm)
        n_ok = int(ok.sum())
        if x_true.shape[1] == 2:
            wa = weighted_accuracy(x_true, ok)
    return EvalReport(float(r2), wa, tuple(int(p) for p in perm), n_ok)
