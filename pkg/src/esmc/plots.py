"""Report rendering: figures and derived CSVs from a finished experiment.

Reads ``summary.json`` and the chain CSVs produced by
:func:`esmc.experiments.run_experiment` and writes PNG figures plus derived
CSV tables next to them.  Uses the Agg backend so it runs headless.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .diagnostics import autocorrelation
from .experiments import load_summary, read_chain_csv
from .targets import make_target

log = logging.getLogger("esmc")

_METRIC_KEYS = (
    "acceptance", "kl", "e1", "e2", "angular_std", "dt_effective", "total_segments",
)


def _pooled_samples(out_dir: Path, run: dict) -> np.ndarray:
    """Stack the retained (post burn-in) samples of every chain in a run."""
    parts = []
    for rel in run["files"]:
        data = read_chain_csv(out_dir / rel)
        parts.append(data["samples"][run["burn_in"]:])
    return np.vstack(parts)


def _density_curve(target, lo: float, hi: float, n: int = 400):
    """Normalized density exp(-V) on a grid, Simpson-normalized over [lo, hi]."""
    if n % 2 == 1:
        n += 1
    x = np.linspace(lo, hi, n + 1)
    f = np.array([math.exp(-target.potential(np.array([xi]))) for xi in x])
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    total = (hi - lo) / (3.0 * n) * float(np.dot(w, f))
    return x, f / total


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _metrics_table(summary: dict, report_dir: Path) -> Path:
    header = [
        "label", "sampler", "target", "dim", "chains", "samples", "burn_in",
        "acceptance", "kl", "e1", "e2", "angular_std", "dt_effective",
        "total_segments", "divergences", "retries", "wall_time_s",
    ]
    rows = []
    for run in summary["runs"]:
        pooled = run["pooled"]
        rows.append([
            run["label"], run["sampler"], run["target"], run["dim"],
            run["n_chains"], run["n_samples"], run["burn_in"],
            *(pooled.get(k, "") for k in _METRIC_KEYS[:6]),
            run["counters"]["total_segments"],
            run["counters"]["divergences"], run["counters"]["retries"],
            round(run["wall_time_s"], 3),
        ])
    path = report_dir / "metrics.csv"
    _write_csv(path, header, rows)
    return path


def _render_overlay1d(summary: dict, out_dir: Path, report_dir: Path) -> list[Path]:
    paths = []
    runs = [r for r in summary["runs"] if r["dim"] == 1]
    if not runs:
        return paths
    target = make_target(runs[0]["target"], **runs[0]["target_params"])
    bins_spec = summary["report"].get("kl_bins") or (-12.0, 10.0, 50)
    lo, hi, count = bins_spec
    edges = np.linspace(lo, hi, int(count) + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])

    fig, axes = plt.subplots(1, len(runs), figsize=(4.0 * len(runs), 3.2), sharey=True)
    if len(runs) == 1:
        axes = [axes]
    xs, dens = _density_curve(target, lo, hi)
    hist_rows = {float(c): [] for c in centers}
    for ax, run in zip(axes, runs):
        pooled = _pooled_samples(out_dir, run)[:, 0]
        counts, _ = np.histogram(pooled, bins=edges, density=True)
        ax.stairs(counts, edges, fill=True, alpha=0.45, label=run["label"])
        ax.plot(xs, dens, "k-", lw=1.2, label="target")
        ax.set_title(run["label"])
        ax.set_xlabel("q")
        for c, v in zip(centers, counts):
            hist_rows[float(c)].append(float(v))
    axes[0].set_ylabel("density")
    axes[-1].legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    png = report_dir / "histogram.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    paths.append(png)

    header = ["bin_center"] + [r["label"] for r in runs] + ["target"]
    target_on_centers = np.interp(centers, xs, dens)
    rows = [
        [format(c, ".8g"), *(format(v, ".8g") for v in hist_rows[float(c)]),
         format(t, ".8g")]
        for c, t in zip(centers, target_on_centers)
    ]
    csv_path = report_dir / "histogram.csv"
    _write_csv(csv_path, header, rows)
    paths.append(csv_path)

    max_lag = int(summary["report"].get("max_lag", 50))
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    acf_cols = {}
    for run in runs:
        pooled = _pooled_samples(out_dir, run)
        per_chain = []
        for rel in run["files"]:
            data = read_chain_csv(out_dir / rel)
            series = data["samples"][run["burn_in"]:, 0]
            per_chain.append(autocorrelation(series, max_lag))
        acf = np.mean(per_chain, axis=0)
        acf_cols[run["label"]] = acf
        ax.plot(np.arange(max_lag + 1), acf, marker=".", ms=3, label=run["label"])
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel("lag")
    ax.set_ylabel("autocorrelation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png = report_dir / "acf.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    paths.append(png)

    header = ["lag"] + list(acf_cols)
    rows = [
        [lag, *(format(acf_cols[k][lag], ".8g") for k in acf_cols)]
        for lag in range(max_lag + 1)
    ]
    csv_path = report_dir / "acf.csv"
    _write_csv(csv_path, header, rows)
    paths.append(csv_path)
    return paths


def _render_scatter2d(summary: dict, out_dir: Path, report_dir: Path) -> list[Path]:
    paths = []
    runs = [r for r in summary["runs"] if r["dim"] == 2]
    if not runs:
        return paths
    target = make_target(runs[0]["target"], **runs[0]["target_params"])
    fig, axes = plt.subplots(1, len(runs), figsize=(3.6 * len(runs), 3.6),
                             sharex=True, sharey=True)
    if len(runs) == 1:
        axes = [axes]
    all_pooled = [_pooled_samples(out_dir, run) for run in runs]
    span = max(float(np.max(np.abs(p))) for p in all_pooled) * 1.05
    grid = np.linspace(-span, span, 120)
    gx, gy = np.meshgrid(grid, grid)
    pot = np.array([
        [target.potential(np.array([x, y])) for x in grid] for y in grid
    ])
    dens = np.exp(-(pot - pot.min()))
    for ax, run, pooled in zip(axes, runs, all_pooled):
        if pooled.shape[0] > 3000:
            idx = np.linspace(0, pooled.shape[0] - 1, 3000).astype(int)
            pooled = pooled[idx]
        ax.contour(gx, gy, dens, levels=6, colors="gray", linewidths=0.6)
        ax.plot(pooled[:, 0], pooled[:, 1], ".", ms=1.5, alpha=0.5)
        ax.set_title(run["label"])
        ax.set_aspect("equal")
    fig.tight_layout()
    png = report_dir / "scatter.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    paths.append(png)
    return paths


def _render_dim_scan(summary: dict, out_dir: Path, report_dir: Path) -> list[Path]:
    paths = []
    series: dict[str, list[tuple[int, dict]]] = {}
    for run in summary["runs"]:
        series.setdefault(run["sampler"], []).append((run["dim"], run["pooled"]))
    for rows in series.values():
        rows.sort()

    fig, axes = plt.subplots(1, 3, figsize=(11.0, 3.4))
    for sampler, rows in series.items():
        dims = [d for d, _ in rows]
        axes[0].plot(dims, [p["acceptance"] for _, p in rows], "o-", label=sampler)
        axes[1].loglog(dims, [p["e1"] for _, p in rows], "o-", label=sampler)
        axes[2].loglog(dims, [p["e2"] for _, p in rows], "o-", label=sampler)
    axes[0].set_xlabel("dimension")
    axes[0].set_ylabel("acceptance")
    axes[0].set_ylim(0.0, 1.05)
    axes[1].set_xlabel("dimension")
    axes[1].set_ylabel("mean error")
    axes[2].set_xlabel("dimension")
    axes[2].set_ylabel("variance error")
    for ax in axes:
        ax.legend(fontsize=8)
    fig.tight_layout()
    png = report_dir / "dim_scan.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    paths.append(png)

    header = ["sampler", "dim", "acceptance", "e1", "e2", "dt_effective"]
    rows_out = []
    for sampler, rows in series.items():
        for dim, pooled in rows:
            rows_out.append([
                sampler, dim,
                format(pooled["acceptance"], ".8g"),
                format(pooled["e1"], ".8g"),
                format(pooled["e2"], ".8g"),
                format(pooled["dt_effective"], ".8g") if "dt_effective" in pooled else "",
            ])
    csv_path = report_dir / "dim_scan.csv"
    _write_csv(csv_path, header, rows_out)
    paths.append(csv_path)
    return paths


def _render_length_scan(summary: dict, out_dir: Path, report_dir: Path) -> list[Path]:
    paths = []
    series: dict[str, list[tuple[int, dict]]] = {}
    for run in summary["runs"]:
        series.setdefault(run["sampler"], []).append((run["n_samples"], run["pooled"]))
    for rows in series.values():
        rows.sort()

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for sampler, rows in series.items():
        lengths = [n for n, _ in rows]
        stds = [p.get("angular_std", np.nan) for _, p in rows]
        ax.plot(lengths, stds, "o-", label=sampler)
    ax.set_xlabel("chain length")
    ax.set_ylabel("sector occupancy spread")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png = report_dir / "angular_spread.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    paths.append(png)

    header = ["sampler", "samples", "angular_std", "acceptance"]
    rows_out = []
    for sampler, rows in series.items():
        for n, pooled in rows:
            rows_out.append([
                sampler, n,
                format(pooled.get("angular_std", float("nan")), ".8g"),
                format(pooled["acceptance"], ".8g"),
            ])
    csv_path = report_dir / "length_scan.csv"
    _write_csv(csv_path, header, rows_out)
    paths.append(csv_path)

    sectors = summary["report"].get("sectors")
    longest = None
    for run in summary["runs"]:
        if run["dim"] == 2 and (longest is None or run["n_samples"] > longest["n_samples"]):
            if run["sampler"] == "esmc":
                longest = run
    if sectors and longest is not None:
        pooled = _pooled_samples(out_dir, longest)
        ang = np.mod(np.arctan2(pooled[:, 1], pooled[:, 0]), 2.0 * np.pi)
        counts, edges = np.histogram(ang, bins=int(sectors), range=(0.0, 2.0 * np.pi))
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        centers = 0.5 * (edges[:-1] + edges[1:])
        ax.bar(centers, counts, width=edges[1] - edges[0], alpha=0.7)
        ax.set_xlabel("angle")
        ax.set_ylabel("samples per sector")
        ax.set_title(longest["label"])
        fig.tight_layout()
        png = report_dir / "sector_counts.png"
        fig.savefig(png, dpi=150)
        plt.close(fig)
        paths.append(png)
    return paths


def render_report(out_dir, report_dir=None) -> list[Path]:
    """Render figures and derived CSVs for a finished experiment.

    ``out_dir`` must contain the summary.json written by ``run_experiment``.
    Files go to ``report_dir`` (default: ``out_dir``).  Returns the list of
    written paths.
    """
    out_dir = Path(out_dir)
    report_dir = Path(report_dir) if report_dir is not None else out_dir
    report_dir.mkdir(parents=True, exist_ok=True)
    summary = load_summary(out_dir)
    kind = summary["report"].get("kind", "auto")
    if kind == "auto":
        dims = {run["dim"] for run in summary["runs"]}
        if len(dims) > 1:
            kind = "dim_scan"
        elif dims == {1}:
            kind = "overlay1d"
        elif dims == {2}:
            kind = "scatter2d"
    paths = [_metrics_table(summary, report_dir)]
    renderers = {
        "overlay1d": _render_overlay1d,
        "scatter2d": _render_scatter2d,
        "dim_scan": _render_dim_scan,
        "length_scan": _render_length_scan,
    }
    renderer = renderers.get(kind)
    if renderer is not None:
        paths.extend(renderer(summary, out_dir, report_dir))
    for path in paths:
        log.info("wrote %s", path)
    return paths
