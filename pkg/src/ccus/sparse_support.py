"""Sensing-matrix estimation by LASSO with stability selection.

The channel sum of a shuffled signal does not depend on the shuffle, so the
support of the summed coefficients can be estimated before any unshuffling.

The LASSO objective is::

    (1 / 2N) * ||y - D @ beta||^2 + lam * ||beta||_1

solved by cyclic coordinate descent.  Columns are rescaled to unit norm for
the updates and the penalty is rescaled to match, so the returned
coefficients solve the objective above in the original units.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .exceptions import EmptySupportError

__all__ = [
    "LassoConfig",
    "LassoConvergenceWarning",
    "LassoResult",
    "StabilityConfig",
    "SupportEstimate",
    "channel_sum",
    "default_lambda_grid",
    "kkt_residual",
    "lasso",
    "lasso_objective",
    "lasso_path",
    "stability_select",
]


class LassoConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LassoConfig:
    lam: float = 0.1
    max_iter: int = 10_000
    tol: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass(frozen=True)
class LassoResult:
    """Coordinate-descent solution.

    `objective` holds the objective value after each full sweep.
    """

    coef: np.ndarray
    kkt_residual: float
    n_iter: int
    converged: bool
    objective: np.ndarray


@dataclass(frozen=True)
class StabilityConfig:
    """Stability selection settings.

    `lambda_grid` of None means 50 log-spaced values from ``lambda_max`` down
    to ``1e-3 * lambda_max``, computed on the full data.
    """

    n_subsamples: int = 100
    subsample_fraction: float = 0.5
    lambda_grid: Optional[Sequence[float]] = None
    threshold: float = 0.7
    seed: int = 0
    n_lambda: int = 50
    lambda_min_ratio: float = 1e-3
    lasso_max_iter: int = 1000
    lasso_tol: float = 1e-6
    weakness: float = 1.0

    def __post_init__(self):
        if self.n_subsamples < 2:
            raise ValueError("n_subsamples must be at least 2")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")
        if not 0.0 < self.weakness <= 1.0:
            raise ValueError("weakness must lie in (0, 1]")
        if self.lambda_grid is not None:
            grid = np.asarray(self.lambda_grid, dtype=float)
            if grid.ndim != 1 or grid.size == 0:
                raise ValueError("lambda_grid must be a non-empty list")
            if np.any(grid < 0) or np.any(np.diff(grid) >= 0):
                raise ValueError("lambda_grid must be non-negative and strictly decreasing")
            object.__setattr__(self, "lambda_grid", tuple(float(v) for v in grid))


@dataclass(frozen=True)
class SupportEstimate:
    """Selected dictionary columns and the induced sensing matrix.

    `indices` are 0-based and sorted.  `truncated` is set when more than N
    columns passed the threshold and only the N most stable were kept.
    """

    indices: np.ndarray
    selection_probabilities: np.ndarray
    sensing_matrix: np.ndarray
    threshold: float
    lambda_grid: np.ndarray = field(repr=False)
    truncated: bool = False

    def to_dict(self):
        return {
            "indices": self.indices.tolist(),
            "selection_probabilities": self.selection_probabilities.tolist(),
            "threshold": self.threshold,
            "truncated": self.truncated,
        }


def channel_sum(y):
    """Sum of all channels; invariant under any cross-channel shuffle."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return y.copy()
    return y.sum(axis=1)


@numba.njit(cache=True)
def _kkt_gram(g, b, scale, lam, n):
    kkt = 0.0
    for j in range(b.shape[0]):
        gj = g[j] * scale[j] / n
        if b[j] > 0.0:
            v = abs(gj - lam)
        elif b[j] < 0.0:
            v = abs(gj + lam)
        else:
            v = max(0.0, abs(gj) - lam)
        if v > kkt:
            kkt = v
    return kkt


@numba.njit(cache=True)
def _objective_gram(b, c, g, yy, scale, lam, n):
    # ||y - Xb||^2 = yy - 2 b.c + b.G.b and G.b = c - g
    bc = 0.0
    bg = 0.0
    l1 = 0.0
    for j in range(b.shape[0]):
        bc += b[j] * c[j]
        bg += b[j] * g[j]
        l1 += abs(b[j]) / scale[j]
    return (yy - bc - bg) / (2.0 * n) + lam * l1


@numba.njit(cache=True)
def _sweep(G, thr, b, g):
    p = b.shape[0]
    sign_changed = False
    for j in range(p):
        gjj = G[j, j]
        if gjj == 0.0:
            continue
        bj = b[j]
        rho = g[j] + gjj * bj
        if rho > thr[j]:
            new = (rho - thr[j]) / gjj
        elif rho < -thr[j]:
            new = (rho + thr[j]) / gjj
        else:
            new = 0.0
        if new != bj:
            if np.sign(new) != np.sign(bj):
                sign_changed = True
            d = new - bj
            for k in range(p):
                g[k] -= G[k, j] * d
            b[j] = new
    return sign_changed


@numba.njit(cache=True)
def _polish(G, c, thr, b):
    # Exact minimizer on the active set with signs held fixed.  If a sign
    # would flip, step only to the first zero crossing, drop that coordinate
    # and retry.  On one orthant face the objective is a convex quadratic
    # minimized at the target, so every step decreases it.
    cur = b.copy()
    for _ in range(b.shape[0]):
        active = np.flatnonzero(cur)
        na = active.shape[0]
        if na == 0:
            return cur, True
        A = np.empty((na, na))
        rhs = np.empty(na)
        s = np.empty(na)
        for i in range(na):
            s[i] = np.sign(cur[active[i]])
            rhs[i] = c[active[i]] - thr[active[i]] * s[i]
            for k in range(na):
                A[i, k] = G[active[i], active[k]]
        try:
            sol = np.linalg.solve(A, rhs)
        except Exception:
            return cur, False
        if not np.all(np.isfinite(sol)):
            return cur, False
        t_hit = np.inf
        hit = -1
        for i in range(na):
            if np.sign(sol[i]) != s[i]:
                old = cur[active[i]]
                t = old / (old - sol[i])
                if t < t_hit:
                    t_hit = t
                    hit = i
        if hit < 0:
            for i in range(na):
                cur[active[i]] = sol[i]
            return cur, True
        for i in range(na):
            old = cur[active[i]]
            cur[active[i]] = old + t_hit * (sol[i] - old)
        cur[active[hit]] = 0.0
    return cur, True


@numba.njit(cache=True)
def _solve_gram(G, c, yy, scale, n, lam, b, max_iter, tol, objective):
    """Coordinate descent with active-set polishing; updates b in place.

    Returns the number of sweeps and the final KKT residual; objective[i]
    receives the objective after sweep i.
    """
    p = b.shape[0]
    thr = np.empty(p)
    for j in range(p):
        thr[j] = n * lam / scale[j]
    g = c - G @ b
    kkt = np.inf
    it = 0
    next_polish = 1
    backoff = 1
    while it < max_iter:
        changed = _sweep(G, thr, b, g)
        objective[it] = _objective_gram(b, c, g, yy, scale, lam, n)
        it += 1
        kkt = _kkt_gram(g, b, scale, lam, n)
        if kkt <= tol:
            break
        if it < next_polish or (changed and it < next_polish + 16):
            continue
        accepted = False
        cand, ok = _polish(G, c, thr, b)
        if ok:
            g_cand = c - G @ cand
            obj = _objective_gram(cand, c, g_cand, yy, scale, lam, n)
            if obj <= objective[it - 1]:
                b[:] = cand
                g[:] = g_cand
                objective[it - 1] = obj
                accepted = True
                kkt = _kkt_gram(g, b, scale, lam, n)
                if kkt <= tol:
                    break
        # polishing that fails to finish the solve is retried less and less often
        backoff = 1 if accepted and backoff == 1 else min(2 * backoff, 256)
        next_polish = it + backoff
    return it, kkt


def _standardize(D):
    norms = np.linalg.norm(D, axis=0)
    scale = np.where(norms > 0, norms, 1.0)
    X = D / scale
    return X, scale


def lasso_objective(D, y, beta, lam):
    r = np.asarray(y) - np.asarray(D) @ beta
    return float(r @ r / (2 * len(r)) + lam * np.abs(beta).sum())


def kkt_residual(D, y, beta, lam):
    """Largest violation of the LASSO optimality conditions at `beta`."""
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    g = D.T @ (np.asarray(y) - D @ beta) / n
    viol = np.where(
        beta > 0,
        np.abs(g - lam),
        np.where(beta < 0, np.abs(g + lam), np.maximum(0.0, np.abs(g) - lam)),
    )
    return float(viol.max()) if viol.size else 0.0


def lasso(D, y, cfg=LassoConfig(), beta0=None):
    """Solve the LASSO by cyclic coordinate descent.

    Parameters
    ----------
    D : array_like, shape (N, p)
    y : array_like, shape (N,)
    cfg : LassoConfig
    beta0 : array_like, optional
        Warm start.

    Returns
    -------
    LassoResult
        `kkt_residual` is recomputed from the residual in the original
        units.  Emits :class:`LassoConvergenceWarning` if it is still above
        ``cfg.tol`` after ``cfg.max_iter`` sweeps.
    """
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    if D.ndim != 2 or y.shape != (D.shape[0],):
        raise ValueError(f"shape mismatch: D {D.shape}, y {y.shape}")
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(y))):
        raise ValueError("D and y must be finite")
    X, scale = _standardize(D)
    G = X.T @ X
    c = X.T @ y
    b = np.zeros(D.shape[1]) if beta0 is None else np.asarray(beta0, dtype=float) * scale
    obj = np.full(cfg.max_iter, np.nan)
    n_iter, _ = _solve_gram(G, c, float(y @ y), scale, D.shape[0], float(cfg.lam), b,
                            cfg.max_iter, cfg.tol, obj)
    coef = b / scale
    kkt = kkt_residual(D, y, coef, cfg.lam)
    converged = kkt <= cfg.tol
    if not converged:
        warnings.warn(
            f"lasso did not converge in {cfg.max_iter} sweeps (KKT residual {kkt:.3g})",
            LassoConvergenceWarning,
            stacklevel=2,
        )
    return LassoResult(coef, kkt, int(n_iter), bool(converged), obj[:n_iter])


def lasso_path(D, y, lambdas, max_iter=1000, tol=1e-8):
    """Warm-started solutions along a decreasing `lambdas` grid, shape (p, L)."""
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    X, scale = _standardize(D)
    G = X.T @ X
    c = X.T @ y
    yy = float(y @ y)
    b = np.zeros(D.shape[1])
    out = np.empty((D.shape[1], len(lambdas)))
    obj = np.empty(max_iter)
    for i, lam in enumerate(lambdas):
        _solve_gram(G, c, yy, scale, D.shape[0], float(lam), b, max_iter, tol, obj)
        out[:, i] = b / scale
    return out


def _unit_variance(D):
    # columns with mean square 1, so (1/N) D^T y is comparable across row subsets
    norms = np.linalg.norm(D, axis=0)
    return D * (np.sqrt(D.shape[0]) / np.where(norms > 0, norms, 1.0))


def default_lambda_grid(D, y, n_lambda=50, min_ratio=1e-3):
    Z = _unit_variance(np.asarray(D, dtype=float))
    lam_max = np.max(np.abs(Z.T @ y)) / Z.shape[0]
    if lam_max == 0:
        raise EmptySupportError("y is orthogonal to every dictionary column")
    return np.geomspace(lam_max, min_ratio * lam_max, n_lambda)


def stability_select(D, y, cfg=StabilityConfig()):
    """Estimate the support of `y` on the columns of `D` by stability selection.

    Each of ``cfg.n_subsamples`` random row subsets (``floor(fraction * N)``
    rows, drawn from ``default_rng([seed, i])``) is fit along the lambda grid
    with columns rescaled to unit mean square.  A column's selection
    probability is the largest, over lambda, fraction of subsamples in which
    its coefficient is nonzero.

    Raises
    ------
    EmptySupportError
        If no column reaches ``cfg.threshold``.
    """
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = D.shape
    if y.shape != (n,):
        raise ValueError(f"y must have length {n}")
    if cfg.lambda_grid is None:
        grid = default_lambda_grid(D, y, cfg.n_lambda, cfg.lambda_min_ratio)
    else:
        grid = np.asarray(cfg.lambda_grid, dtype=float)
    m = max(1, int(np.floor(cfg.subsample_fraction * n)))
    tol = cfg.lasso_tol * max(float(grid[0]), np.finfo(float).tiny)

    counts = np.zeros((len(grid), p))
    for i in range(cfg.n_subsamples):
        rng = np.random.default_rng([cfg.seed, i])
        rows = np.sort(rng.choice(n, size=m, replace=False))
        Z = _unit_variance(D[rows])
        if cfg.weakness < 1.0:
            Z = Z * rng.uniform(cfg.weakness, 1.0, size=p)
        path = lasso_path(Z, y[rows], grid, cfg.lasso_max_iter, tol)
        counts += (path != 0).T
    probs = (counts / cfg.n_subsamples).max(axis=0)

    selected = np.flatnonzero(probs >= cfg.threshold)
    if selected.size == 0:
        raise EmptySupportError(
            f"no column reached selection probability {cfg.threshold} "
            f"(max {probs.max():.3f})"
        )
    truncated = selected.size > n
    if truncated:
        # stable sort keeps the lower index first among equal probabilities
        order = np.argsort(-probs[selected], kind="stable")
        selected = np.sort(selected[order[:n]])
    return SupportEstimate(
        indices=selected,
        selection_probabilities=probs,
        sensing_matrix=D[:, selected],
        threshold=cfg.threshold,
        lambda_grid=grid,
        truncated=truncated,
    )
