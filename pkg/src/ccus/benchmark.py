"""Monte Carlo harness: shuffle fraction sweeps on synthetic instances.

Each replicate draws one instance, estimates its support once (the channel
sum, hence the support, is the same for every shuffle of it) and then runs
the pipeline at every shuffle fraction.  Alongside the pipeline it records
two references: least squares on the unshuffled signal and the robust fit
without reassignment.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SynthSpec, synth_instance
from .exceptions import UnshuffleError
from .metrics import evaluate, r_squared
from .pipeline import PipelineConfig, run_pipeline
from .signal_model import ShuffleSpec, apply_shuffle, random_shuffle
from .sparse_support import StabilityConfig, channel_sum, stability_select

__all__ = [
    "BenchmarkConfig",
    "CALCIUM_REGIME",
    "EXTRA_COLUMNS",
    "medians_by_fraction",
    "run_benchmark",
    "run_replicate",
]

EXTRA_COLUMNS = ("ls_r2", "mm_r2", "support_size", "error")

# Two neurons with two transients each, 20 dB, circulant calcium kernel.
# The lambda floor stops the path before it fits the noise.
CALCIUM_REGIME = {
    "synth": SynthSpec(k_per_channel=2, support_mode="disjoint", snr_db=20.0),
    "stability": StabilityConfig(lambda_min_ratio=0.03),
}


@dataclass(frozen=True)
class BenchmarkConfig:
    fractions: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    replicates: int = 100
    shuffle_mode: str = "pairwise_swap"

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr or any(not 0.0 <= f <= 1.0 for f in fr):
            raise ValueError("fractions must be a non-empty list of values in [0, 1]")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        object.__setattr__(self, "fractions", fr)
        ShuffleSpec(mode=self.shuffle_mode)


@dataclass(frozen=True)
class _Job:
    seed: int
    synth: SynthSpec
    pipeline: PipelineConfig
    bench: BenchmarkConfig = field(default_factory=BenchmarkConfig)


def _ls_r2(x, E):
    coef = np.linalg.lstsq(E, x, rcond=None)[0]
    return r_squared(x, E @ coef)


def run_replicate(seed, synth=CALCIUM_REGIME["synth"], pipeline=None, bench=BenchmarkConfig()):
    """All benchmark rows for one replicate seed, one per shuffle fraction.

    R^2 is measured against the unshuffled observed signal.  A replicate
    whose support estimate fails yields rows with NaN metrics and the error
    name in the ``error`` column.
    """
    if pipeline is None:
        pipeline = PipelineConfig(stability=CALCIUM_REGIME["stability"])
    pipeline = replace(pipeline, seed=seed)
    inst = synth_instance(replace(synth, seed=seed))
    x = inst.x
    n, m = x.shape
    rows = []
    try:
        support = stability_select(
            inst.dictionary.matrix, channel_sum(x), replace(pipeline.stability, seed=seed)
        )
    except UnshuffleError as exc:
        for f in bench.fractions:
            rows.append(_failed_row(seed, f, type(exc).__name__))
        return rows
    ls = _ls_r2(x, support.sensing_matrix)
    for f in bench.fractions:
        s = random_shuffle(n, m, ShuffleSpec(fraction=f, seed=seed, mode=bench.shuffle_mode))
        y = apply_shuffle(x, s)
        t0 = time.perf_counter()
        try:
            res = run_pipeline(y, inst.dictionary, pipeline, support=support)
        except UnshuffleError as exc:
            rows.append(_failed_row(seed, f, type(exc).__name__))
            continue
        wall = (time.perf_counter() - t0) * 1e3
        rep = evaluate(x, res.reconstructed, s, res.estimated_shuffle)
        rows.append(
            {
                "seed": seed,
                "fraction": f,
                "r2": rep.r_squared,
                "wa": rep.weighted_accuracy,
                "rss": res.rss,
                "iters": res.selected_iteration,
                "wall_ms": round(wall, 3),
                "ls_r2": ls,
                "mm_r2": r_squared(x, res.initial_reconstruction),
                "support_size": int(support.indices.size),
                "error": "",
            }
        )
    return rows


def _failed_row(seed, f, err):
    nan = float("nan")
    return {
        "seed": seed,
        "fraction": f,
        "r2": nan,
        "wa": nan,
        "rss": nan,
        "iters": 0,
        "wall_ms": 0.0,
        "ls_r2": nan,
        "mm_r2": nan,
        "support_size": 0,
        "error": err,
    }


def _run_job(job):
    return run_replicate(job.seed, job.synth, job.pipeline, job.bench)


def run_benchmark(bench=BenchmarkConfig(), synth=CALCIUM_REGIME["synth"], pipeline=None,
                  seed=0, jobs=1):
    """Rows for replicate seeds ``seed, seed + 1, ...``, in seed order.

    `jobs` > 1 spreads replicates over worker processes; the output does
    not depend on it.
    """
    if pipeline is None:
        pipeline = PipelineConfig(stability=CALCIUM_REGIME["stability"])
    work = [_Job(seed + i, synth, pipeline, bench) for i in range(bench.replicates)]
    if jobs <= 1:
        chunks = [_run_job(j) for j in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_run_job, work))
    return [row for chunk in chunks for row in chunk]


def medians_by_fraction(rows, key):
    """``{fraction: median of rows[key]}``.

    Failed replicates (NaN or missing) count as the worst possible value,
    so they can only pull the median down.
    """
    out = {}
    for f in sorted({r["fraction"] for r in rows}):
        vals = [r[key] for r in rows if r["fraction"] == f]
        vals = np.array([-np.inf if v is None else v for v in vals], dtype=float)
        vals[np.isnan(vals)] = -np.inf
        out[f] = float(np.median(vals))
    return out
