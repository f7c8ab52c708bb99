"""MM-estimation of linear regression with Tukey's bisquare.

Stage one is an S-estimate: exact fits to random elemental subsets give
candidate coefficients, each scored by the M-scale of its residuals (bisquare
at ``c_scale = 1.548``, 50% breakdown); the best few are refined by
iteratively reweighted least squares.  Stage two keeps that scale fixed and
runs IRLS with the bisquare at ``c_eff = 4.685`` (95% Gaussian efficiency).

``rho`` is normalized to a maximum of 1, and the M-scale solves
``mean(rho(r / s)) = 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .exceptions import RankDeficientError

__all__ = [
    "MmConfig",
    "RobustFit",
    "bisquare_rho",
    "bisquare_weights",
    "m_scale",
    "mm_estimate",
    "stacked_design",
]

DELTA = 0.5


@dataclass(frozen=True)
class MmConfig:
    s_subsamples: int = 500
    bisquare_c_scale: float = 1.548
    bisquare_c_eff: float = 4.685
    max_irls_iter: int = 100
    tol: float = 1e-10
    seed: int = 0
    n_best: int = 5
    s_refine_iter: int = 30
    s_refine_tol: float = 1e-7
    s_initial_steps: int = 2
    ls_start: bool = True

    def __post_init__(self):
        if not self.bisquare_c_eff > self.bisquare_c_scale > 0:
            raise ValueError("need bisquare_c_eff > bisquare_c_scale > 0")
        if self.s_subsamples < 1 or self.n_best < 1:
            raise ValueError("s_subsamples and n_best must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class RobustFit:
    """Result of :func:`mm_estimate`.

    `weights` are the final IRLS weights; `s_coefficients` is the stage-one
    S-estimate the IRLS started from.
    """

    coefficients: np.ndarray
    scale: float
    weights: np.ndarray
    converged: bool
    n_iter: int
    s_coefficients: np.ndarray
    n_singular_subsets: int = 0


def bisquare_rho(u, c):
    """Tukey bisquare rho scaled to a maximum of 1."""
    # clip before squaring so huge residuals cannot overflow
    t = 1.0 - np.minimum(np.abs(np.asarray(u)) / c, 1.0) ** 2
    return 1.0 - t * t * t


def bisquare_weights(u, c):
    """IRLS weights ``psi(u) / u``, normalized to 1 at the origin."""
    z = np.minimum(np.abs(np.asarray(u)) / c, 1.0) ** 2
    return np.where(z < 1.0, (1.0 - z) ** 2, 0.0)


def m_scale(residuals, c=1.548, tol=1e-12):
    """Bisquare M-scale: the ``s`` solving ``mean(rho(r / s; c)) = 0.5``.

    Returns 0 when at most half of the residuals are nonzero, since the
    equation then has no positive root.
    """
    r = np.abs(np.asarray(residuals, dtype=float)).ravel()
    n = r.size
    if n == 0:
        raise ValueError("no residuals")
    if np.count_nonzero(r) <= DELTA * n:
        return 0.0
    s0 = np.median(r)
    if s0 == 0.0:
        s0 = r.max()

    def f(t):
        return bisquare_rho(r / (s0 * t), c).mean() - DELTA

    lo, hi = 1.0, 1.0
    while f(hi) > 0:
        hi *= 2.0
    while f(lo) < 0:
        lo *= 0.5
    if lo == hi:
        return float(s0 * lo)
    t = brentq(f, lo, hi, xtol=tol * lo, rtol=max(tol, 4 * np.finfo(float).eps), maxiter=500)
    return float(s0 * t)


def _batch_m_scale(R, c, n_iter=15):
    # Vectorized fixed-point iteration s <- s * sqrt(mean rho / delta), used
    # only to rank candidates; the winners are re-scored by m_scale.
    absr = np.abs(R)
    n = R.shape[1]
    degenerate = np.count_nonzero(absr, axis=1) <= DELTA * n
    s = np.median(absr, axis=1) / 0.6745
    s = np.where(s > 0, s, absr.max(axis=1))
    s = np.where(degenerate | (s == 0), 1.0, s)
    for _ in range(n_iter):
        s = s * np.sqrt(bisquare_rho(absr / s[:, None], c).mean(axis=1) / DELTA)
        s = np.where(s > 0, s, np.finfo(float).tiny)
    return np.where(degenerate, 0.0, s)


def stacked_design(E_hat, m):
    """Block-diagonal ``kron(I_m, E_hat)`` design for ``m`` channels."""
    if m < 1:
        raise ValueError("m must be positive")
    return np.kron(np.eye(m), np.asarray(E_hat, dtype=float))


def _wls(A, b, w):
    sw = np.sqrt(w)
    return np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)[0]


def _nonsingular_subsets(A, order, rtol=1e-8):
    # Scan rows in the given random order, accepting a row only if it is not
    # (numerically) in the span of the rows already taken.  All subsets are
    # grown together; Q holds an orthonormal basis of each accepted row space.
    s, n = order.shape
    q = A.shape[1]
    Q = np.zeros((s, q, q))
    taken = np.zeros((s, q), dtype=np.intp)
    count = np.zeros(s, dtype=np.intp)
    live = np.arange(s)
    for t in range(n):
        rows = order[live, t]
        a = A[rows]
        Ql = Q[live]
        r = a - (np.matmul(Ql, a[:, :, None]).transpose(0, 2, 1) @ Ql)[:, 0]
        # second pass for numerical orthogonality
        r = r - (np.matmul(Ql, r[:, :, None]).transpose(0, 2, 1) @ Ql)[:, 0]
        rn = np.linalg.norm(r, axis=1)
        ok = rn > rtol * np.maximum(np.linalg.norm(a, axis=1), np.finfo(float).tiny)
        acc = live[ok]
        Q[acc, count[acc]] = r[ok] / rn[ok, None]
        taken[acc, count[acc]] = rows[ok]
        count[acc] += 1
        live = live[count[live] < q]
        if live.size == 0:
            break
    full = count == q
    return np.sort(taken[full], axis=1), int(np.count_nonzero(~full))


def _elemental_candidates(A, b, cfg):
    n, q = A.shape
    rng = np.random.default_rng(cfg.seed)
    order = rng.random((cfg.s_subsamples, n)).argsort(axis=1)
    idx, n_short = _nonsingular_subsets(A, order)
    if idx.shape[0] == 0:
        return None, cfg.s_subsamples
    sub = A[idx]
    s = np.linalg.svd(sub, compute_uv=False)
    ok = s[:, -1] > 1e-12 * np.maximum(s[:, 0], 1e-300)
    if not np.any(ok):
        return None, cfg.s_subsamples
    betas = np.linalg.solve(sub[ok], b[idx[ok]][..., None])[..., 0]
    return betas, n_short + int(np.count_nonzero(~ok))


def _batch_irls_steps(A, b, B, c, n_steps):
    # A few reweighting steps applied to every candidate at once (fast-S).
    q = A.shape[1]
    for _ in range(n_steps):
        R = b[None, :] - B @ A.T
        s = _batch_m_scale(R, c)
        s = np.where(s > 0, s, 1.0)
        W = bisquare_weights(R / s[:, None], c)
        G = (A.T[None, :, :] * W[:, None, :]) @ A
        ridge = 1e-12 * np.trace(G, axis1=1, axis2=2)[:, None, None] + np.finfo(float).tiny
        G = G + ridge * np.eye(q)
        B = np.linalg.solve(G, ((W * b[None, :]) @ A)[..., None])[..., 0]
    return B


def _s_refine(A, b, beta, c, tol, max_iter):
    scale = m_scale(b - A @ beta, c)
    for _ in range(max_iter):
        if scale == 0.0:
            break
        w = bisquare_weights((b - A @ beta) / scale, c)
        if np.count_nonzero(w) < A.shape[1]:
            break
        new = _wls(A, b, w)
        new_scale = m_scale(b - A @ new, c)
        if new_scale > scale:
            break
        step = np.max(np.abs(new - beta))
        beta, scale = new, new_scale
        if step <= tol * max(np.max(np.abs(beta)), scale):
            break
    return beta, scale


def mm_estimate(A, b, cfg=MmConfig()):
    """MM-estimate of ``b ~ A @ beta``.

    Parameters
    ----------
    A : array_like, shape (n, q)
        Full column rank design, ``n > q``.
    b : array_like, shape (n,)
    cfg : MmConfig

    Returns
    -------
    RobustFit

    Raises
    ------
    RankDeficientError
        If `A` is rank deficient or every elemental subset is singular.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n, q = A.shape
    if b.shape != (n,):
        raise ValueError(f"b must have length {n}")
    if n <= q:
        raise ValueError(f"need more observations than coefficients, got n={n}, q={q}")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficientError("design matrix is rank deficient")

    cands, n_singular = _elemental_candidates(A, b, cfg)
    if cands is None:
        raise RankDeficientError("every elemental subset was singular")
    if cfg.ls_start:
        cands = np.vstack([np.linalg.lstsq(A, b, rcond=None)[0], cands])
    if cfg.s_initial_steps > 0:
        cands = _batch_irls_steps(A, b, cands, cfg.bisquare_c_scale, cfg.s_initial_steps)
    approx = _batch_m_scale(b[None, :] - cands @ A.T, cfg.bisquare_c_scale)
    order = np.lexsort((np.arange(len(approx)), approx))[: cfg.n_best]

    best_beta, best_scale = None, np.inf
    for i in order:
        beta, scale = _s_refine(
            A, b, cands[i], cfg.bisquare_c_scale, cfg.s_refine_tol, cfg.s_refine_iter
        )
        if scale < best_scale:
            best_beta, best_scale = beta, scale
    s_beta = best_beta.copy()

    if best_scale == 0.0:
        # exact fit to more than half the data: keep those points
        w = (np.abs(b - A @ best_beta) <= 1e-12 * max(np.abs(b).max(), 1.0)).astype(float)
        beta = _wls(A, b, w) if np.count_nonzero(w) >= q else best_beta
        resid = b - A @ beta
        w = np.where(np.abs(resid) <= 1e-12 * max(np.abs(b).max(), 1.0), 1.0, 0.0)
        return RobustFit(beta, 0.0, w, True, 0, s_beta, n_singular)

    beta = best_beta
    c = cfg.bisquare_c_eff
    converged = False
    it = 0
    for it in range(1, cfg.max_irls_iter + 1):
        w = bisquare_weights((b - A @ beta) / best_scale, c)
        if np.count_nonzero(w) < q:
            break
        new = _wls(A, b, w)
        step = np.max(np.abs(new - beta))
        beta = new
        if step <= cfg.tol * max(np.max(np.abs(beta)), best_scale):
            converged = True
            break
    w = bisquare_weights((b - A @ beta) / best_scale, c)
    return RobustFit(beta, float(best_scale), w, converged, it, s_beta, n_singular)
