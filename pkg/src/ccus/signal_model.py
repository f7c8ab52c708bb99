"""Multi-channel signals and cross-channel shuffles.

A multi-channel signal is an ``(N, M)`` float array: column ``m`` is channel
``m`` and row ``n`` is the sample index.  A cross-channel shuffle permutes the
entries *within* each row, independently per row, so samples never move in
time, only between channels.

The shuffle is stored as an ``(N, M)`` integer array ``assignment`` with::

    y[n, m] = x[n, assignment[n, m]]

The equivalent ``NM x NM`` block matrix of binary diagonal blocks is built
only on request by :func:`materialize_pi`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

__all__ = [
    "ChannelShuffle",
    "ShuffleSpec",
    "as_signal",
    "apply_shuffle",
    "identity_shuffle",
    "invert_shuffle",
    "materialize_pi",
    "random_shuffle",
    "validate_shuffle",
    "vec",
]


def as_signal(x, name="x"):
    """Return `x` as a read-only ``(N, M)`` float64 array.

    A 1-d input is treated as a single channel.  Raises ``ValueError`` on
    empty or non-finite input.
    """
    arr = np.array(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty (N, M) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def vec(x):
    """Stack the channels of `x` into one vector ``(x_1; x_2; ...; x_M)``."""
    return np.asarray(x).reshape(-1, order="F")


@dataclass(frozen=True, eq=False)
class ChannelShuffle:
    """Per-row channel permutation.

    Attributes
    ----------
    assignment : ndarray of int, shape (N, M)
        ``assignment[n, m]`` is the source channel feeding output channel
        ``m`` at row ``n`` (0-based).
    """

    assignment: np.ndarray

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.intp)
        if a.ndim != 2:
            raise ValueError(f"assignment must be 2-d, got shape {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def n_samples(self) -> int:
        return self.assignment.shape[0]

    @property
    def n_channels(self) -> int:
        return self.assignment.shape[1]

    def shuffled_rows(self) -> np.ndarray:
        """Boolean mask of rows carrying a non-identity permutation."""
        return np.any(self.assignment != np.arange(self.n_channels), axis=1)

    @property
    def n_shuffled(self) -> int:
        return int(self.shuffled_rows().sum())

    def __eq__(self, other):
        if not isinstance(other, ChannelShuffle):
            return NotImplemented
        return np.array_equal(self.assignment, other.assignment)

    def __hash__(self):
        return hash(self.assignment.tobytes())

    def to_list(self) -> list[list[int]]:
        return self.assignment.tolist()


@dataclass(frozen=True)
class ShuffleSpec:
    """Recipe for :func:`random_shuffle`.

    `fraction` is the fraction of rows that receive a non-identity
    permutation.  ``pairwise_swap`` transposes two random channels on each
    affected row; ``uniform_permutation`` draws a uniformly random
    non-identity permutation.
    """

    fraction: float = 0.0
    seed: int = 0
    mode: Literal["pairwise_swap", "uniform_permutation"] = "pairwise_swap"

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in [0, 1], got {self.fraction}")
        if self.mode not in ("pairwise_swap", "uniform_permutation"):
            raise ValueError(f"unknown shuffle mode {self.mode!r}")


def identity_shuffle(n, m):
    return ChannelShuffle(np.tile(np.arange(m), (n, 1)))


def validate_shuffle(s):
    """True iff every row of `s` is a bijection on the channel set."""
    a = np.asarray(s.assignment if isinstance(s, ChannelShuffle) else s)
    if a.ndim != 2 or a.size == 0:
        return False
    m = a.shape[1]
    if np.any(a < 0) or np.any(a >= m):
        return False
    return bool(np.all(np.sort(a, axis=1) == np.arange(m)))


def _check_valid(s):
    if not validate_shuffle(s):
        raise ValueError("shuffle rows must be permutations of the channel indices")


def apply_shuffle(x, s):
    """Shuffle the channels of `x` row by row: ``y[n, m] = x[n, s[n, m]]``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"x must be (N, M), got shape {x.shape}")
    if x.shape != s.assignment.shape:
        raise ValueError(
            f"signal shape {x.shape} does not match shuffle shape {s.assignment.shape}"
        )
    _check_valid(s)
    return np.take_along_axis(x, s.assignment, axis=1)


def invert_shuffle(s):
    _check_valid(s)
    a = s.assignment
    inv = np.empty_like(a)
    rows = np.arange(a.shape[0])[:, None]
    inv[rows, a] = np.arange(a.shape[1])
    return ChannelShuffle(inv)


def materialize_pi(s):
    """Dense ``NM x NM`` permutation matrix acting on :func:`vec` vectors.

    Block ``(m, k)`` is ``diag(q_mk)`` with ``q_mk[n] = 1`` iff output channel
    ``m`` takes source channel ``k`` at row ``n``.
    """
    _check_valid(s)
    n, m = s.assignment.shape
    pi = np.zeros((n * m, n * m))
    rows = np.arange(n)
    for out_ch in range(m):
        src = s.assignment[:, out_ch]
        pi[out_ch * n + rows, src * n + rows] = 1.0
    return pi


def _random_non_identity(rng, m, mode):
    if mode == "pairwise_swap":
        i, j = rng.choice(m, size=2, replace=False)
        perm = np.arange(m)
        perm[i], perm[j] = perm[j], perm[i]
        return perm
    while True:
        perm = rng.permutation(m)
        if np.any(perm != np.arange(m)):
            return perm


def random_shuffle(n, m, spec):
    """Draw a shuffle with exactly ``round(spec.fraction * n)`` shuffled rows.

    Rounding is half-up.  Deterministic given ``spec.seed``.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    n_shuf = int(np.floor(spec.fraction * n + 0.5))
    if n_shuf and m < 2:
        raise ValueError("a single channel cannot be shuffled")
    rng = np.random.default_rng(spec.seed)
    a = np.tile(np.arange(m), (n, 1))
    for row in np.sort(rng.choice(n, size=n_shuf, replace=False)):
        a[row] = _random_non_identity(rng, m, spec.mode)
    return ChannelShuffle(a)
