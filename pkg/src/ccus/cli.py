"""Command-line front end.

Every subcommand reads an optional JSON config whose top-level keys are
sections (``synth``, ``shuffle``, ``pipeline``, ``stability``, ``mm``,
``als``, ``rfrp``, ``benchmark``, ``oracle``) plus ``seed``.  Unknown keys
are rejected.  Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure; on failure a JSON object describing the error is
written to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .data import (
    AlsConfig,
    SynthSpec,
    als_baseline,
    read_dictionary,
    read_json,
    read_traces,
    synth_instance,
    write_benchmark_csv,
    write_dictionary,
    write_json,
    write_traces,
)
from .exceptions import EnumerationCapError, TraceFormatError, UnshuffleError
from .metrics import evaluate
from .pipeline import PipelineConfig, brute_force_oracle, run_pipeline
from .plotting import Series, line_chart_svg
from .rfrp import check_kxk_rfrp
from .robust_fit import MmConfig
from .signal_model import ChannelShuffle, ShuffleSpec, apply_shuffle, random_shuffle
from .sparse_support import StabilityConfig

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RfrpRequest:
    k_max: int = 10
    budget: int = 10_000

    def __post_init__(self):
        if self.k_max < 1 or self.budget < 1:
            raise ValueError("k_max and budget must be positive")


@dataclasses.dataclass(frozen=True)
class OracleSpec:
    """Tiny instance for the exhaustive oracle.

    ``mode="shared"`` puts every channel in one random ``k``-dimensional
    subspace; ``"independent"`` gives each channel its own.
    """

    n: int = 8
    m: int = 2
    k: int = 2
    mode: str = "shared"
    fraction: float = 0.5

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.k < 1:
            raise ValueError("n, m and k must be positive")
        if self.mode not in ("shared", "independent"):
            raise ValueError(f"unknown oracle mode {self.mode!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")


SECTIONS = {
    "synth": (SynthSpec, bm.CALCIUM_REGIME["synth"]),
    "shuffle": (ShuffleSpec, ShuffleSpec(fraction=0.35)),
    "pipeline": (PipelineConfig, PipelineConfig()),
    "stability": (StabilityConfig, bm.CALCIUM_REGIME["stability"]),
    "mm": (MmConfig, MmConfig()),
    "als": (AlsConfig, AlsConfig()),
    "rfrp": (RfrpRequest, RfrpRequest()),
    "benchmark": (bm.BenchmarkConfig, bm.BenchmarkConfig()),
    "oracle": (OracleSpec, OracleSpec()),
}
# nested sections and seeds are configured elsewhere
_SKIP = {"seed", "stability", "mm"}


def _fields(section):
    cls, default = SECTIONS[section]
    return [f for f in dataclasses.fields(cls) if f.name not in _SKIP], default


def _coerce(section, name, value, default):
    where = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, str) and value.lower() in ("inf", "infinity", "-inf", "-infinity"):
            return float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    # list-valued fields (lambda_grid, fractions)
    if value is None:
        return None
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(f"{where} must be a list of numbers")
    return tuple(float(v) for v in value)


def parse_config(doc):
    """Build every configuration object from a parsed JSON document.

    Returns a dict with one entry per section plus ``seed``.  Pipeline
    sub-configurations are attached to ``pipeline``.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    out = {"seed": seed}
    for section in SECTIONS:
        body = doc.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"{section} must be a JSON object")
        fields, default = _fields(section)
        names = {f.name for f in fields}
        bad = set(body) - names
        if bad:
            raise ConfigError(f"unknown keys in {section}: {', '.join(sorted(bad))}")
        kwargs = {
            k: _coerce(section, k, v, getattr(default, k)) for k, v in body.items()
        }
        try:
            out[section] = dataclasses.replace(default, **kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    out["pipeline"] = dataclasses.replace(
        out["pipeline"], stability=out["stability"], mm=out["mm"], seed=seed
    )
    return out


def load_config(path, seed=None):
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
    if seed is not None:
        doc = dict(doc, seed=seed)
    return parse_config(doc)


def _describe(sections):
    lines = ["config keys (JSON sections, defaults in parentheses):", "  seed (0)"]
    for section in sections:
        fields, default = _fields(section)
        lines.append(f"  {section}:")
        for f in fields:
            lines.append(f"    {f.name} ({getattr(default, f.name)!r})")
    return "\n".join(lines)


# -- subcommands -------------------------------------------------------------


def cmd_generate(cfg, out):
    """Synthetic traces, dictionary and ground truth under directory `out`."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    synth = dataclasses.replace(cfg["synth"], seed=seed)
    inst = synth_instance(synth)
    spec = dataclasses.replace(cfg["shuffle"], seed=seed)
    shuffle = random_shuffle(inst.x.shape[0], inst.x.shape[1], spec)
    y = apply_shuffle(inst.x, shuffle)
    write_traces(out / "traces.csv", y)
    write_dictionary(out / "dictionary.json", inst.dictionary)
    truth = {
        "seed": seed,
        "synth": _jsonable(dataclasses.asdict(synth)),
        "shuffle": {
            "fraction": spec.fraction,
            "mode": spec.mode,
            "n_shuffled": shuffle.n_shuffled,
            "assignment": shuffle.to_list(),
        },
        "betas": inst.betas.tolist(),
        "supports": [s.tolist() for s in inst.supports],
        "x": inst.x.tolist(),
    }
    write_json(out / "truth.json", truth)
    return truth


def _jsonable(d):
    return {
        k: (str(v) if isinstance(v, float) and math.isinf(v) else v) for k, v in d.items()
    }


def cmd_unshuffle(traces_path, dict_path, cfg, out_path, truth_path=None):
    y = read_traces(traces_path)
    dictionary = read_dictionary(dict_path)
    res = run_pipeline(y, dictionary, cfg["pipeline"])
    doc = res.to_dict()
    if truth_path is not None:
        truth = read_json(truth_path)
        x = np.asarray(truth["x"], dtype=float)
        s = ChannelShuffle(np.asarray(truth["shuffle"]["assignment"]))
        doc["evaluation"] = evaluate(x, res.reconstructed, s, res.estimated_shuffle).to_dict()
    out_path = Path(out_path)
    write_json(out_path, doc)
    stem = out_path.with_suffix("")
    write_traces(f"{stem}_reconstructed.csv", res.reconstructed)
    write_traces(f"{stem}_assignment.csv", res.estimated_shuffle.assignment)
    return doc


def cmd_benchmark(cfg, out, jobs=1):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = bm.run_benchmark(cfg["benchmark"], cfg["synth"], cfg["pipeline"], cfg["seed"], jobs)
    write_benchmark_csv(out / "benchmark.csv", rows, bm.EXTRA_COLUMNS)
    summary = {k: bm.medians_by_fraction(rows, k) for k in ("r2", "wa", "ls_r2", "mm_r2")}
    fr = sorted(summary["r2"])
    r2_panel = {
        "xlabel": "shuffled fraction",
        "ylabel": "median R^2",
        "ylim": (min(0.0, *[summary["r2"][f] for f in fr if math.isfinite(summary["r2"][f])]), 1.0),
        "series": [
            Series(fr, [summary["r2"][f] for f in fr], "reassignment"),
            Series(fr, [summary["ls_r2"][f] for f in fr], "LS, no shuffling", "dashed"),
            Series(fr, [summary["mm_r2"][f] for f in fr], "MM only", "dashdot"),
        ],
    }
    wa_panel = {
        "xlabel": "shuffled fraction",
        "ylabel": "median WA",
        "ylim": (0.0, 1.0),
        "series": [Series(fr, [summary["wa"][f] for f in fr], "reassignment")],
    }
    (out / "summary.svg").write_text(line_chart_svg([r2_panel, wa_panel]))
    write_json(out / "summary.json", {k: {str(f): v for f, v in d.items()} for k, d in summary.items()})
    return rows, summary


def cmd_verify_rfrp(dict_path, k_max, budget, seed, out_path=None):
    D = read_dictionary(dict_path).matrix
    k_top = min(k_max, *D.shape)
    reports = [check_kxk_rfrp(D, K, budget=budget, seed=seed).to_dict() for K in range(1, k_top + 1)]
    doc = {
        "property": "KxK-RFRP",
        "k_max": k_top,
        "budget": budget,
        "seed": seed,
        "passed": all(r["passed"] for r in reports),
        "reports": reports,
    }
    if out_path is not None:
        write_json(out_path, doc)
    return doc


def oracle_instance(spec, seed):
    """Random bases, distinct channels in them, and a shuffled observation."""
    rng = np.random.default_rng(seed)
    if spec.mode == "shared":
        E = rng.standard_normal((spec.n, spec.k))
        bases = [E] * spec.m
    else:
        bases = [rng.standard_normal((spec.n, spec.k)) for _ in range(spec.m)]
    x = np.column_stack([B @ rng.standard_normal(spec.k) for B in bases])
    s = random_shuffle(spec.n, spec.m, ShuffleSpec(fraction=spec.fraction, seed=seed))
    return bases, x, s, apply_shuffle(x, s)


def cmd_oracle(cfg, out_path=None):
    spec = cfg["oracle"]
    bases, x, s, y = oracle_instance(spec, cfg["seed"])
    res = brute_force_oracle(y, bases)
    doc = res.to_dict()
    doc["truth"] = {"signal": x.tolist(), "shuffle": s.to_list()}
    if out_path is not None:
        write_json(out_path, doc)
    return doc


def cmd_baseline(traces_path, cfg, out_path):
    y = read_traces(traces_path)
    base = np.empty_like(y)
    corrected = np.empty_like(y)
    for m in range(y.shape[1]):
        base[:, m], corrected[:, m] = als_baseline(y[:, m], cfg["als"])
    out_path = Path(out_path)
    write_traces(out_path, corrected)
    write_traces(f"{out_path.with_suffix('')}_baseline.csv", base)
    return base, corrected


# -- argument parsing ----------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(
        prog="ccus",
        description="Recover multi-channel signals whose samples were shuffled across channels.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, sections):
        sp = sub.add_parser(
            name,
            help=help_,
            description=help_,
            epilog=_describe(sections),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        return sp

    sp = add("generate", "write synthetic shuffled traces, dictionary and ground truth",
             ["synth", "shuffle"])
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("unshuffle", "run the recovery pipeline on a traces CSV",
             ["pipeline", "stability", "mm"])
    sp.add_argument("--traces", required=True)
    sp.add_argument("--dictionary", required=True)
    sp.add_argument("--truth", help="ground-truth JSON from `generate`, adds an evaluation")
    sp.add_argument("--out", required=True, help="result JSON path")

    sp = add("benchmark", "Monte Carlo sweep over shuffle fractions",
             ["benchmark", "synth", "pipeline", "stability", "mm"])
    sp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("verify-rfrp", "randomized K x K rank check of a dictionary for K = 1..k_max",
             ["rfrp"])
    sp.add_argument("--dictionary", required=True)
    sp.add_argument("--k-max", type=int, help="largest K (overrides rfrp.k_max)")
    sp.add_argument("--budget", type=int, help="submatrices per K (overrides rfrp.budget)")
    sp.add_argument("--out", help="report JSON path (default stdout)")

    sp = add("oracle", "exhaustive uniqueness check on a tiny random instance", ["oracle"])
    sp.add_argument("--out", help="result JSON path (default stdout)")

    sp = add("baseline", "asymmetric least squares baseline correction of a traces CSV", ["als"])
    sp.add_argument("--traces", required=True)
    sp.add_argument("--out", required=True, help="corrected traces CSV path")
    return p


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        if args.command == "verify-rfrp":
            k_max = args.k_max if args.k_max is not None else cfg["rfrp"].k_max
            budget = args.budget if args.budget is not None else cfg["rfrp"].budget
            RfrpRequest(k_max, budget)
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be positive")
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_CONFIG, exc)

    try:
        if args.command == "generate":
            cmd_generate(cfg, args.out)
        elif args.command == "unshuffle":
            doc = cmd_unshuffle(args.traces, args.dictionary, cfg, args.out, args.truth)
            print(json.dumps({"rss": doc["rss"], "evaluation": doc.get("evaluation")}))
        elif args.command == "benchmark":
            _, summary = cmd_benchmark(cfg, args.out, args.jobs)
            print(json.dumps({k: {str(f): v for f, v in d.items()} for k, d in summary.items()}))
        elif args.command == "verify-rfrp":
            doc = cmd_verify_rfrp(args.dictionary, k_max, budget, cfg["seed"], args.out)
            if args.out is None:
                print(json.dumps(doc, indent=2))
        elif args.command == "oracle":
            doc = cmd_oracle(cfg, args.out)
            if args.out is None:
                print(json.dumps(doc, indent=2))
        elif args.command == "baseline":
            cmd_baseline(args.traces, cfg, args.out)
    except EnumerationCapError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (UnshuffleError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (TraceFormatError, OSError, KeyError, json.JSONDecodeError, ValueError) as exc:
        return _fail(EXIT_DATA, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
