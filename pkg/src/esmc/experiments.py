"""Experiment configuration, presets, and the run orchestrator.

An experiment is a named list of sampler runs over a target density plus a
report block saying how the results should be summarized.  ``run_experiment``
executes every run, writes one CSV per chain and a ``summary.json`` with
per-chain and pooled statistics.  The report path (see :mod:`esmc.plots`)
renders figures and derived CSVs from those files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import MassSpec
from .diagnostics import (
    BinSpec,
    angular_symmetry_stat,
    chain_stats,
    effective_time_step,
    histogram_kl,
    moment_errors,
    pooled_retained,
)
from .samplers import Chain, make_sampler_params, run_chains
from .targets import TargetDensity, make_target, target_names

log = logging.getLogger("esmc")

SCHEMA_VERSION = 1

_SAMPLERS = ("rwmc", "hmc", "esmc")
_INITS = ("standard_normal", "target_exact")
_REPORT_KINDS = ("auto", "overlay1d", "scatter2d", "dim_scan", "length_scan")


class ConfigError(ValueError):
    """Raised when an experiment configuration is malformed."""


@dataclass
class RunSpec:
    """One sampler run: a target, a sampler with parameters, and chain sizes."""

    label: str
    target: str
    sampler: str
    sampler_params: dict
    n_chains: int
    n_samples: int
    burn_in_fraction: float = 0.1
    init: str = "standard_normal"
    target_params: dict = field(default_factory=dict)


@dataclass
class ReportSpec:
    """How the report path should summarize the runs."""

    kind: str = "auto"
    max_lag: int = 50
    kl_bins: tuple[float, float, int] | None = None
    sectors: int | None = None


@dataclass
class ExperimentConfig:
    name: str
    runs: list[RunSpec]
    report: ReportSpec = field(default_factory=ReportSpec)
    seed: int = 0


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    """Check an experiment config and return it; raises ConfigError on problems."""
    _require(bool(config.name), "experiment name must be non-empty")
    _require(bool(config.runs), "experiment has no runs")
    _require(int(config.seed) >= 0, "seed must be a non-negative integer")
    _require(
        config.report.kind in _REPORT_KINDS,
        f"unknown report kind {config.report.kind!r}; choose from {_REPORT_KINDS}",
    )
    _require(config.report.max_lag >= 1, "report max_lag must be >= 1")
    if config.report.kl_bins is not None:
        lo, hi, count = config.report.kl_bins
        _require(hi > lo and int(count) >= 2, "kl_bins must be (lo, hi, count>=2) with hi > lo")
    if config.report.sectors is not None:
        _require(int(config.report.sectors) >= 2, "sectors must be >= 2")
    seen = set()
    for run in config.runs:
        _require(bool(run.label), "run label must be non-empty")
        _require(run.label not in seen, f"duplicate run label {run.label!r}")
        seen.add(run.label)
        _require(
            run.target in target_names(),
            f"unknown target {run.target!r}; choose from {target_names()}",
        )
        _require(
            run.sampler in _SAMPLERS,
            f"unknown sampler {run.sampler!r}; choose from {_SAMPLERS}",
        )
        _require(run.n_chains >= 1, f"run {run.label!r}: n_chains must be >= 1")
        _require(run.n_samples >= 1, f"run {run.label!r}: n_samples must be >= 1")
        _require(
            0.0 <= run.burn_in_fraction < 1.0,
            f"run {run.label!r}: burn_in_fraction must be in [0, 1)",
        )
        _require(
            run.init in _INITS,
            f"run {run.label!r}: init must be one of {_INITS}",
        )
        try:
            target = make_target(run.target, **run.target_params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"run {run.label!r}: bad target_params: {exc}") from exc
        if run.init == "target_exact":
            if type(target).sample_exact is TargetDensity.sample_exact:
                raise ConfigError(
                    f"run {run.label!r}: target {run.target!r} has no exact sampler"
                )
        try:
            make_sampler_params(run.sampler, **run.sampler_params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"run {run.label!r}: bad sampler_params: {exc}") from exc
    return config


def load_config(path) -> ExperimentConfig:
    """Load and validate an experiment config from a YAML file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a plain dict (the YAML schema)."""
    known = {"name", "seed", "report", "runs"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    report_raw = raw.get("report", {}) or {}
    if not isinstance(report_raw, dict):
        raise ConfigError("report block must be a mapping")
    extra = set(report_raw) - {"kind", "max_lag", "kl_bins", "sectors"}
    if extra:
        raise ConfigError(f"unknown report keys: {sorted(extra)}")
    kl_bins = report_raw.get("kl_bins")
    if kl_bins is not None:
        if not (isinstance(kl_bins, (list, tuple)) and len(kl_bins) == 3):
            raise ConfigError("kl_bins must be a [lo, hi, count] triple")
        kl_bins = (float(kl_bins[0]), float(kl_bins[1]), int(kl_bins[2]))
    report = ReportSpec(
        kind=str(report_raw.get("kind", "auto")),
        max_lag=int(report_raw.get("max_lag", 50)),
        kl_bins=kl_bins,
        sectors=None if report_raw.get("sectors") is None else int(report_raw["sectors"]),
    )
    runs_raw = raw.get("runs")
    if not isinstance(runs_raw, list) or not runs_raw:
        raise ConfigError("runs must be a non-empty list")
    runs = []
    for i, entry in enumerate(runs_raw):
        if not isinstance(entry, dict):
            raise ConfigError(f"runs[{i}] must be a mapping")
        extra = set(entry) - {
            "label", "target", "target_params", "sampler", "sampler_params",
            "chains", "samples", "burn_in", "init",
        }
        if extra:
            raise ConfigError(f"runs[{i}]: unknown keys {sorted(extra)}")
        for key in ("label", "target", "sampler"):
            if key not in entry:
                raise ConfigError(f"runs[{i}]: missing required key {key!r}")
        runs.append(RunSpec(
            label=str(entry["label"]),
            target=str(entry["target"]),
            target_params=dict(entry.get("target_params") or {}),
            sampler=str(entry["sampler"]),
            sampler_params=dict(entry.get("sampler_params") or {}),
            n_chains=int(entry.get("chains", 1)),
            n_samples=int(entry.get("samples", 1000)),
            burn_in_fraction=float(entry.get("burn_in", 0.1)),
            init=str(entry.get("init", "standard_normal")),
        ))
    config = ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        runs=runs,
        report=report,
        seed=int(raw.get("seed", 0)),
    )
    return validate_config(config)


def _bimodal1d_preset(seed: int) -> ExperimentConfig:
    runs = [
        RunSpec("rwmc", "bimodal1d", "rwmc", {"proposal_cov": 1.0}, 5, 5000),
        RunSpec("hmc", "bimodal1d", "hmc", {"dt": 1.0, "T": 10.0}, 5, 5000),
        RunSpec("esmc", "bimodal1d", "esmc", {"h": 0.35, "T": 10.0}, 5, 5000),
    ]
    report = ReportSpec(kind="overlay1d", max_lag=50, kl_bins=(-12.0, 10.0, 50))
    return ExperimentConfig("bimodal1d", runs, report, seed)


def _mixture2d_preset(seed: int) -> ExperimentConfig:
    runs = [
        RunSpec("rwmc", "mixture2d", "rwmc", {"proposal_cov": 0.1}, 6, 1000),
        RunSpec("hmc", "mixture2d", "hmc", {"dt": 1.0, "T": 10.0}, 6, 1000),
        RunSpec("esmc", "mixture2d", "esmc", {"h": 1.0, "T": 10.0}, 6, 1000),
    ]
    return ExperimentConfig("mixture2d", runs, ReportSpec(kind="scatter2d"), seed)


def _dimension_scan_preset(seed: int) -> ExperimentConfig:
    runs = []
    for n in (4, 8, 16, 32, 64):
        params = {"dim": n}
        runs.append(RunSpec(
            f"rwmc_n{n}", "diag_gaussian", "rwmc", {"proposal_cov": 1.0 / n ** 2},
            5, 5000, init="target_exact", target_params=params,
        ))
        runs.append(RunSpec(
            f"hmc_n{n}", "diag_gaussian", "hmc", {"dt": 1.0 / n, "T": 5.0},
            5, 5000, init="target_exact", target_params=params,
        ))
        runs.append(RunSpec(
            f"esmc_n{n}", "diag_gaussian", "esmc", {"h": math.sqrt(n) / 2.0, "T": 5.0},
            5, 5000, init="target_exact", target_params=params,
        ))
    return ExperimentConfig("dimension_scan", runs, ReportSpec(kind="dim_scan"), seed)


def _flower_preset(seed: int) -> ExperimentConfig:
    runs = []
    for length in (1000, 2000, 3000, 4000, 5000):
        runs.append(RunSpec(
            f"rwmc_len{length}", "flower", "rwmc", {"proposal_cov": 0.1}, 1, length,
        ))
        runs.append(RunSpec(
            f"hmc_len{length}", "flower", "hmc", {"dt": 0.3, "T": 0.3}, 1, length,
        ))
        runs.append(RunSpec(
            f"esmc_len{length}", "flower", "esmc", {"h": 1.0, "T": 1.0}, 1, length,
        ))
    report = ReportSpec(kind="length_scan", sectors=15)
    return ExperimentConfig("flower", runs, report, seed)


_PRESETS = {
    "bimodal1d": _bimodal1d_preset,
    "mixture2d": _mixture2d_preset,
    "dimension_scan": _dimension_scan_preset,
    "flower": _flower_preset,
}


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(_PRESETS))


def make_preset(name: str, seed: int = 0) -> ExperimentConfig:
    """Return one of the built-in experiment configurations."""
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; choose from {preset_names()}"
        ) from None
    return validate_config(factory(seed))


def _fmt(x) -> str:
    """Format one CSV cell; floats keep full precision, None becomes empty."""
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def chain_csv_path(run_dir: Path, chain_id: int) -> Path:
    return Path(run_dir) / f"chain_{chain_id:02d}.csv"


def write_chain_csv(path, chain: Chain, chain_id: int) -> None:
    """Write one chain to CSV: one row per stored sample, burn-in included."""
    dim = chain.samples.shape[1]
    header = ["chain_id", "step", "accepted"]
    header += [f"q_{i}" for i in range(dim)]
    header += ["hamiltonian", "segments"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for step in range(chain.samples.shape[0]):
            row = [chain_id, step, int(chain.accepted[step])]
            row += [_fmt(chain.samples[step, i]) for i in range(dim)]
            row.append(_fmt(chain.hamiltonians[step]) if chain.hamiltonians is not None else "")
            row.append(int(chain.segments[step]) if chain.segments is not None else "")
            writer.writerow(row)


def read_chain_csv(path):
    """Read a chain CSV back into arrays.

    Returns a dict with keys chain_id, samples (n, dim), accepted (n,),
    hamiltonian (n,) or None, segments (n,) or None.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        qcols = [i for i, name in enumerate(header) if name.startswith("q_")]
        if not qcols or header[:3] != ["chain_id", "step", "accepted"]:
            raise ValueError(f"{path}: not a chain CSV (header {header})")
        h_col = header.index("hamiltonian")
        s_col = header.index("segments")
        rows = list(reader)
    n = len(rows)
    samples = np.empty((n, len(qcols)))
    accepted = np.empty(n, dtype=bool)
    hams = np.full(n, np.nan)
    segs = np.full(n, -1, dtype=np.int64)
    chain_id = int(rows[0][0]) if rows else 0
    has_h = has_s = False
    for k, row in enumerate(rows):
        accepted[k] = row[2] == "1"
        for j, col in enumerate(qcols):
            samples[k, j] = float(row[col])
        if row[h_col]:
            hams[k] = float(row[h_col])
            has_h = True
        if row[s_col]:
            segs[k] = int(row[s_col])
            has_s = True
    return {
        "chain_id": chain_id,
        "samples": samples,
        "accepted": accepted,
        "hamiltonian": hams if has_h else None,
        "segments": segs if has_s else None,
    }


def write_events_csv(path, chain: Chain, chain_id: int) -> None:
    """Write the segment-level trace of an energy-stepping chain."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain_id", "step", "segment", "t_start", "t_end", "event", "level"])
        for step, records in enumerate(chain.events or []):
            for k, rec in enumerate(records):
                writer.writerow([
                    chain_id, step, k,
                    _fmt(rec.t_start), _fmt(rec.t_end),
                    rec.event.value, _fmt(rec.level),
                ])


def _pooled_block(chains: list[Chain], target, run: RunSpec, report: ReportSpec) -> dict:
    pooled = pooled_retained(chains)
    out: dict = {
        "n_retained": int(pooled.shape[0]),
        "mean": [float(x) for x in pooled.mean(axis=0)],
        "cov_diag": [float(x) for x in pooled.var(axis=0, ddof=1)],
        "acceptance": float(np.mean([c.acceptance for c in chains])),
    }
    if target.dim == 1 and report.kl_bins is not None:
        out["kl"] = float(histogram_kl(pooled, target, BinSpec(*report.kl_bins)))
    moments = target.exact_moments
    if moments is not None:
        e1, e2 = moment_errors(pooled, *moments)
        out["e1"] = float(e1)
        out["e2"] = float(e2)
    if target.dim == 2 and report.sectors is not None:
        out["angular_std"] = float(angular_symmetry_stat(pooled, report.sectors))
    total_segments = sum(int(c.segments.sum()) for c in chains if c.segments is not None)
    if run.sampler == "esmc" and total_segments:
        n_proposals = sum(len(c) for c in chains)
        out["total_segments"] = total_segments
        out["dt_effective"] = float(effective_time_step(
            total_segments, n_proposals, float(run.sampler_params["T"]),
        ))
    return out


def run_experiment(
    config: ExperimentConfig,
    out_dir,
    *,
    emit_trace: bool = False,
    threads: int = 1,
) -> dict:
    """Execute every run in the experiment and write chains plus summary.json.

    Each run gets its own seed derived from the experiment seed, its own
    subdirectory of ``out_dir`` for the chain CSVs, and per-chain statistics
    in the summary.  Returns the summary dict that was written.
    """
    validate_config(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary: dict = {
        "schema_version": SCHEMA_VERSION,
        "name": config.name,
        "seed": int(config.seed),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "report": asdict(config.report),
        "runs": [],
    }
    for index, run in enumerate(config.runs):
        target = make_target(run.target, **run.target_params)
        params = make_sampler_params(run.sampler, **run.sampler_params)
        run_seed = int(np.random.SeedSequence([config.seed, index]).generate_state(1)[0])
        run_dir = out_dir / run.label
        run_dir.mkdir(parents=True, exist_ok=True)
        log.info("run %s: %s on %s (%d chains x %d samples)",
                 run.label, run.sampler, run.target, run.n_chains, run.n_samples)
        t0 = time.perf_counter()
        chains = run_chains(
            target, params, run.n_chains, run.n_samples, run.burn_in_fraction,
            run.init, run_seed,
            mass=MassSpec.identity(target.dim),
            record_events=emit_trace and run.sampler == "esmc",
            threads=threads,
        )
        wall = time.perf_counter() - t0
        files = []
        per_chain = []
        proposal_T = run.sampler_params.get("T") if run.sampler == "esmc" else None
        for cid, chain in enumerate(chains):
            path = chain_csv_path(run_dir, cid)
            write_chain_csv(path, chain, cid)
            files.append(str(path.relative_to(out_dir)))
            if emit_trace and chain.events is not None:
                write_events_csv(run_dir / f"events_{cid:02d}.csv", chain, cid)
            stats = chain_stats(
                chain, target, chain_id=cid, max_lag=config.report.max_lag,
                kl_bins=BinSpec(*config.report.kl_bins)
                if target.dim == 1 and config.report.kl_bins is not None else None,
                sectors=config.report.sectors if target.dim == 2 else None,
                proposal_T=proposal_T,
            )
            per_chain.append(stats.to_dict())
        counters = {
            "divergences": int(sum(c.divergences for c in chains)),
            "retries": int(sum(c.retries for c in chains)),
            "total_segments": int(sum(
                int(c.segments.sum()) for c in chains if c.segments is not None
            )),
        }
        summary["runs"].append({
            "label": run.label,
            "target": run.target,
            "target_params": run.target_params,
            "dim": int(target.dim),
            "sampler": run.sampler,
            "sampler_params": run.sampler_params,
            "n_chains": run.n_chains,
            "n_samples": run.n_samples,
            "burn_in_fraction": run.burn_in_fraction,
            "burn_in": chains[0].burn_in,
            "init": run.init,
            "run_seed": run_seed,
            "wall_time_s": wall,
            "files": files,
            "per_chain": per_chain,
            "pooled": _pooled_block(chains, target, run, config.report),
            "counters": counters,
        })
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    log.info("wrote %s", summary_path)
    return summary


def load_summary(out_dir) -> dict:
    """Read summary.json from an experiment output directory."""
    path = Path(out_dir) / "summary.json"
    with open(path) as fh:
        summary = json.load(fh)
    version = summary.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {version}")
    return summary
