"""Dictionaries, synthetic instances, baseline correction and file formats.

File formats
------------
traces CSV
    Header ``t,ch1,...,chM``; one row per sample, ``t`` is the 0-based sample
    index; values written with 17 significant digits so a write/read round
    trip is bit-exact.
dictionary JSON
    ``{"structure": "circulant", "kernel": [...]}`` or
    ``{"structure": "dense", "matrix": [[...], ...]}``.
benchmark CSV
    ``seed,fraction,r2,wa,rss,iters,wall_ms`` (plus optional trailing columns).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Optional

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .exceptions import TraceFormatError

__all__ = [
    "AlsConfig",
    "BENCHMARK_COLUMNS",
    "Dictionary",
    "SynthInstance",
    "SynthSpec",
    "als_baseline",
    "als_iterate",
    "als_objective",
    "calcium_kernel",
    "make_circulant",
    "read_dictionary",
    "read_json",
    "read_traces",
    "synth_instance",
    "write_benchmark_csv",
    "write_dictionary",
    "write_json",
    "write_traces",
]

BENCHMARK_COLUMNS = ("seed", "fraction", "r2", "wa", "rss", "iters", "wall_ms")


@dataclass(frozen=True, eq=False)
class Dictionary:
    """An ``N x p`` dictionary; circulant ones also keep their kernel."""

    matrix: np.ndarray
    structure: Literal["dense", "circulant"] = "dense"
    kernel: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.ndim != 2:
            raise ValueError("dictionary matrix must be 2-d")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        if self.structure == "circulant":
            if self.kernel is None:
                raise ValueError("circulant dictionary needs its kernel")
            object.__setattr__(self, "kernel", np.array(self.kernel, dtype=float))

    @property
    def shape(self):
        return self.matrix.shape

    def to_dict(self):
        if self.structure == "circulant":
            return {"structure": "circulant", "kernel": self.kernel.tolist()}
        return {"structure": "dense", "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d):
        structure = d.get("structure", "dense")
        if structure == "circulant":
            return make_circulant(d["kernel"])
        if structure == "dense":
            return cls(np.asarray(d["matrix"], dtype=float))
        raise ValueError(f"unknown dictionary structure {structure!r}")


def make_circulant(kernel):
    """Circulant dictionary whose column ``j`` is `kernel` shifted down by ``j``."""
    kernel = np.asarray(kernel, dtype=float).ravel()
    if kernel.size < 1:
        raise ValueError("kernel must be non-empty")
    return Dictionary(scipy.linalg.circulant(kernel), "circulant", kernel)


def calcium_kernel(n, tau_decay=10.0, tau_rise=1.0, jitter=0.0, seed=0):
    """Fast-rise, exponential-decay transient of length `n`, unit l2 norm.

    Sampled from ``t = 1`` so the first tap is nonzero; a zero tap would put
    zeros on a whole diagonal of the circulant dictionary.

    A sum of exponentials makes every Toeplitz block of the circulant low
    rank, so small square submatrices are singular.  `jitter` multiplies
    each tap by ``1 + jitter * N(0, 1)`` (seeded), as a kernel estimated
    from data would deviate from the ideal shape, which restores full rank.
    """
    t = np.arange(1, n + 1, dtype=float)
    k = np.exp(-t / tau_decay) - np.exp(-t / tau_rise)
    if jitter > 0:
        k = k * (1.0 + jitter * np.random.default_rng(seed).standard_normal(n))
    return k / np.linalg.norm(k)


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic sparse multi-channel instance.

    `support_mode` is ``shared`` (one support for every channel),
    ``disjoint`` or ``overlapping`` (``shared_count`` common columns plus
    private ones).  ``circulant`` dictionaries need ``p == n``.
    """

    n: int = 121
    m: int = 2
    p: int = 121
    k_per_channel: int = 3
    support_mode: Literal["shared", "disjoint", "overlapping"] = "shared"
    shared_count: int = 0
    snr_db: float = math.inf
    dictionary_mode: Literal["gaussian", "circulant"] = "circulant"
    tau_decay: float = 10.0
    tau_rise: float = 1.0
    kernel_jitter: float = 0.01
    positive: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.p < 1:
            raise ValueError("n, m and p must be positive")
        if not 1 <= self.k_per_channel <= self.p:
            raise ValueError("k_per_channel must lie in [1, p]")
        if self.kernel_jitter < 0:
            raise ValueError("kernel_jitter must be non-negative")
        if self.dictionary_mode not in ("gaussian", "circulant"):
            raise ValueError(f"unknown dictionary_mode {self.dictionary_mode!r}")
        if self.dictionary_mode == "circulant" and self.p != self.n:
            raise ValueError("a circulant dictionary is square: p must equal n")
        k, m = self.k_per_channel, self.m
        if self.support_mode == "shared":
            return
        if self.support_mode == "disjoint":
            need = m * k
        elif self.support_mode == "overlapping":
            if not 0 <= self.shared_count <= k:
                raise ValueError("shared_count must lie in [0, k_per_channel]")
            need = self.shared_count + m * (k - self.shared_count)
        else:
            raise ValueError(f"unknown support_mode {self.support_mode!r}")
        if need > self.p:
            raise ValueError(f"support_mode {self.support_mode} needs {need} columns, p={self.p}")


@dataclass(frozen=True, eq=False)
class SynthInstance:
    """`x` is the observed (noisy) signal, `clean` the exact ``D @ betas``."""

    x: np.ndarray
    clean: np.ndarray
    betas: np.ndarray
    dictionary: Dictionary
    supports: tuple

    @property
    def union_support(self):
        return np.flatnonzero(np.any(self.betas != 0, axis=1))


def _draw_supports(rng, spec):
    k, m, p = spec.k_per_channel, spec.m, spec.p
    if spec.support_mode == "shared":
        s = np.sort(rng.choice(p, k, replace=False))
        return [s.copy() for _ in range(m)]
    if spec.support_mode == "disjoint":
        cols = rng.choice(p, m * k, replace=False)
        return [np.sort(cols[i * k:(i + 1) * k]) for i in range(m)]
    s = spec.shared_count
    cols = rng.choice(p, s + m * (k - s), replace=False)
    common = cols[:s]
    rest = cols[s:]
    return [np.sort(np.concatenate([common, rest[i * (k - s):(i + 1) * (k - s)]])) for i in range(m)]


def synth_instance(spec):
    """Draw a dictionary, sparse coefficients and the resulting signal.

    Nonzero magnitudes are uniform on [0.5, 2].  Draws are repeated until
    the channels are pairwise distinct and the summed coefficients keep
    magnitude at least 0.5 on the union support (no cancellation).
    Bit-reproducible for a fixed ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.dictionary_mode == "circulant":
        dictionary = make_circulant(
            calcium_kernel(spec.n, spec.tau_decay, spec.tau_rise, spec.kernel_jitter)
        )
    else:
        dictionary = Dictionary(rng.standard_normal((spec.n, spec.p)))
    D = dictionary.matrix

    for _ in range(1000):
        supports = _draw_supports(rng, spec)
        betas = np.zeros((spec.p, spec.m))
        for ch, s in enumerate(supports):
            mag = rng.uniform(0.5, 2.0, size=s.size)
            sign = np.ones(s.size) if spec.positive else rng.choice([-1.0, 1.0], size=s.size)
            betas[s, ch] = sign * mag
        union = np.flatnonzero(np.any(betas != 0, axis=1))
        if np.any(np.abs(betas.sum(axis=1)[union]) < 0.5):
            continue
        clean = D @ betas
        if _has_duplicate_channels(clean):
            continue
        break
    else:
        raise RuntimeError("could not draw distinct channels without cancellation")

    if math.isinf(spec.snr_db):
        x = clean.copy()
    else:
        power = np.mean(clean**2, axis=0)
        sigma = np.sqrt(power * 10.0 ** (-spec.snr_db / 10.0))
        x = clean + rng.standard_normal(clean.shape) * sigma
    return SynthInstance(x, clean, betas, dictionary, tuple(supports))


def _has_duplicate_channels(x):
    m = x.shape[1]
    return any(np.allclose(x[:, a], x[:, b]) for a in range(m) for b in range(a + 1, m))


# -- asymmetric least squares baseline -------------------------------------


@dataclass(frozen=True)
class AlsConfig:
    smoothness_lambda: float = 1e5
    asymmetry_p: float = 0.01
    n_iter: int = 10

    def __post_init__(self):
        if self.smoothness_lambda <= 0:
            raise ValueError("smoothness_lambda must be positive")
        if not 0.0 < self.asymmetry_p < 1.0:
            raise ValueError("asymmetry_p must lie in (0, 1)")
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")


def _second_difference(n):
    return sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n), format="csc")


def als_objective(y, z, w, lam):
    """``sum(w * (y - z)**2) + lam * ||second difference of z||^2``."""
    d2 = np.diff(z, 2)
    return float(np.sum(w * (y - z) ** 2) + lam * d2 @ d2)


def als_iterate(y, cfg=AlsConfig()) -> Iterator[tuple]:
    """Yield ``(baseline, weights_used)`` after each reweighted smoothing step."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n < 3:
        raise ValueError("baseline correction needs at least 3 samples")
    D2 = _second_difference(n)
    H = cfg.smoothness_lambda * (D2.T @ D2)
    w = np.ones(n)
    for _ in range(cfg.n_iter):
        z = spsolve(sparse.csc_matrix(sparse.diags(w) + H), w * y)
        yield z, w
        w = np.where(y > z, cfg.asymmetry_p, 1.0 - cfg.asymmetry_p)


def als_baseline(y, cfg=AlsConfig()):
    """Asymmetric least squares baseline; returns ``(baseline, y - baseline)``."""
    y = np.asarray(y, dtype=float)
    z = None
    for z, _ in als_iterate(y, cfg):
        pass
    return z, y - z


# -- file formats ------------------------------------------------------------


def _fmt(v):
    return format(float(v), ".17g")


def write_traces(path, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"ch{m + 1}" for m in range(x.shape[1])])
        for n, row in enumerate(x):
            w.writerow([str(n)] + [_fmt(v) for v in row])


def read_traces(path):
    """Read a traces CSV into an ``(N, M)`` array.

    Raises :class:`TraceFormatError` with the offending line number for bad
    headers, ragged rows, non-numeric or non-finite cells.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError("empty file")
        header = [h.strip() for h in header]
        n_ch = len(header) - 1
        if n_ch < 1 or header[0] != "t" or header[1:] != [f"ch{i + 1}" for i in range(n_ch)]:
            raise TraceFormatError(f"expected header t,ch1,...,chM, got {','.join(header)}", 1)
        for cells in reader:
            lineno = reader.line_num
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != n_ch + 1:
                raise TraceFormatError(f"expected {n_ch + 1} columns, got {len(cells)}", lineno)
            vals = []
            for c in cells[1:]:
                try:
                    v = float(c)
                except ValueError:
                    raise TraceFormatError(f"non-numeric cell {c!r}", lineno) from None
                if not math.isfinite(v):
                    raise TraceFormatError(f"non-finite cell {c!r}", lineno)
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise TraceFormatError("no samples")
    return np.array(rows, dtype=float)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_dictionary(path, dictionary):
    write_json(path, dictionary.to_dict())


def read_dictionary(path):
    return Dictionary.from_dict(read_json(path))


def write_benchmark_csv(path, rows, extra_columns=()):
    """Write benchmark rows (mappings keyed by ``BENCHMARK_COLUMNS``)."""
    cols = list(BENCHMARK_COLUMNS) + list(extra_columns)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
