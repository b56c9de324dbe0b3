"""Chain quality measures: autocorrelation, histogram KL, moments, symmetry.

These are the quantities the experiment harness reports; each one is a
plain function over samples so the tests can feed synthetic data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .samplers import Chain

__all__ = [
    "BinSpec",
    "ChainStats",
    "angular_symmetry_stat",
    "autocorrelation",
    "chain_stats",
    "effective_time_step",
    "histogram_kl",
    "moment_errors",
    "pooled_retained",
]


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation at lags 0..max_lag (lag 0 fixed at 1).

    The biased estimator divides every lag by n, which keeps the sequence
    positive semidefinite.  A constant series has no autocorrelation signal;
    by convention the result is all ones (and a warning is emitted).
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.shape[0]
    if max_lag < 0:
        raise ValueError(f"max_lag must be non-negative, got {max_lag}")
    if max_lag >= n:
        raise ValueError(f"max_lag {max_lag} must be below the series length {n}")
    d = x - x.mean()
    c0 = float(np.dot(d, d))
    if c0 == 0.0:
        warnings.warn("autocorrelation of a constant series is undefined; returning ones")
        return np.ones(max_lag + 1)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for lag in range(1, max_lag + 1):
        out[lag] = float(np.dot(d[:-lag], d[lag:])) / c0
    return out


@dataclass(frozen=True)
class BinSpec:
    """Uniform histogram binning over [lo, hi]."""

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if not (self.hi > self.lo and self.count >= 1):
            raise ValueError(f"need lo < hi and count >= 1, got {self}")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count + 1)


def _target_bin_masses(target, bins: BinSpec, intervals: int) -> np.ndarray:
    """Per-bin mass of exp(-V) by composite Simpson, renormalised over the range."""
    if intervals % 2:
        intervals += 1
    edges = bins.edges
    weights = np.full(intervals + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    masses = np.empty(bins.count)
    qbuf = np.empty(1)
    for i in range(bins.count):
        xs = np.linspace(edges[i], edges[i + 1], intervals + 1)
        dx = (edges[i + 1] - edges[i]) / intervals
        acc = 0.0
        for x, w in zip(xs, weights):
            qbuf[0] = x
            acc += w * math.exp(-float(target.potential(qbuf)))
        masses[i] = acc * dx / 3.0
    total = masses.sum()
    if not (math.isfinite(total) and total > 0):
        raise ValueError("target mass over the binning range is not positive and finite")
    return masses / total


def histogram_kl(samples, target, bins: BinSpec, *, floor: float = 1e-12,
                 simpson_intervals: int = 64) -> float:
    """KL divergence of the binned empirical distribution from the target.

    One-dimensional only.  Both histograms are normalised over the binning
    range; target bin masses come from Simpson integration of exp(-V) and
    are floored at ``floor`` so stray samples in far-tail bins cannot
    produce infinities.  With no samples in range the divergence is 0.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise ValueError(f"histogram KL needs 1-D samples, got shape {x.shape}")
    counts, _ = np.histogram(x, bins=bins.edges)
    total = int(counts.sum())
    if total == 0:
        return 0.0
    p = counts / total
    q = np.maximum(_target_bin_masses(target, bins, simpson_intervals), floor)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def moment_errors(samples, exact_mean, exact_var) -> tuple[float, float]:
    """Normalised first/second moment errors of pooled samples.

    e1 is the Euclidean distance of the sample mean from the exact mean over
    N; e2 the root sum of squared relative errors of the per-component
    variances over N.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    mu = np.asarray(exact_mean, dtype=float)
    var = np.asarray(exact_var, dtype=float)
    n = x.shape[1]
    if mu.shape[0] != n or var.shape[0] != n:
        raise ValueError("exact moment shapes do not match the sample dimension")
    e1 = float(np.linalg.norm(x.mean(axis=0) - mu)) / n
    rel = (x.var(axis=0, ddof=1) - var) / var
    e2 = float(np.sqrt(np.sum(rel**2))) / n
    return e1, e2


def angular_symmetry_stat(samples, m: int) -> float:
    """Spread of sample counts over m equal angular sectors, per sample.

    Perfect m-fold symmetry pushes the statistic to 0; all mass in one
    sector gives sqrt(m-1)/m.  Used on 2-D targets with known rotational
    symmetry.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[1] != 2:
        raise ValueError(f"angular statistic needs 2-D samples, got dim {x.shape[1]}")
    if m < 1:
        raise ValueError(f"sector count must be positive, got {m}")
    if x.shape[0] == 0:
        return 0.0
    theta = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2.0 * math.pi)
    sector = np.minimum((theta / (2.0 * math.pi / m)).astype(int), m - 1)
    counts = np.bincount(sector, minlength=m)
    return float(np.std(counts)) / x.shape[0]


def effective_time_step(total_segments: int, n_proposals: int, T: float) -> float:
    """Average trajectory duration per integration segment, T / (i per proposal)."""
    if n_proposals < 1 or total_segments < 1:
        raise ValueError("need at least one proposal and one segment")
    return T * n_proposals / total_segments


def pooled_retained(chains: list[Chain]) -> np.ndarray:
    """Stack post-burn-in samples of several chains."""
    return np.vstack([c.retained for c in chains])


@dataclass
class ChainStats:
    """Summary of one chain; fields that do not apply to a sampler are None."""

    chain_id: int
    sampler: str
    length: int
    burn_in: int
    acceptance: float
    mean: np.ndarray
    cov_diag: np.ndarray
    acf: np.ndarray
    divergences: int = 0
    retries: int = 0
    kl: float | None = None
    e1: float | None = None
    e2: float | None = None
    angular_std: float | None = None
    segments_total: int | None = None
    dt_effective: float | None = None

    def to_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, np.ndarray):
                out[key] = value.tolist()
            elif isinstance(value, (np.floating, np.integer)):
                out[key] = value.item()
            else:
                out[key] = value
        return out


def chain_stats(
    chain: Chain,
    target,
    *,
    chain_id: int = 0,
    max_lag: int = 50,
    kl_bins: BinSpec | None = None,
    sectors: int | None = None,
    proposal_T: float | None = None,
) -> ChainStats:
    """Compute the per-chain summary used by the experiment reports."""
    retained = chain.retained
    lag = min(max_lag, retained.shape[0] - 1)
    stats = ChainStats(
        chain_id=chain_id,
        sampler=chain.sampler,
        length=len(chain),
        burn_in=chain.burn_in,
        acceptance=chain.acceptance,
        mean=retained.mean(axis=0),
        cov_diag=retained.var(axis=0, ddof=1),
        acf=autocorrelation(retained[:, 0], lag),
        divergences=chain.divergences,
        retries=chain.retries,
    )
    if kl_bins is not None and target.dim == 1:
        stats.kl = histogram_kl(retained, target, kl_bins)
    if target.exact_moments is not None:
        stats.e1, stats.e2 = moment_errors(retained, *target.exact_moments)
    if sectors and target.dim == 2:
        stats.angular_std = angular_symmetry_stat(retained, sectors)
    if chain.segments is not None:
        stats.segments_total = int(chain.segments.sum())
        if proposal_T is not None:
            stats.dt_effective = effective_time_step(
                stats.segments_total, len(chain), proposal_T
            )
    return stats
