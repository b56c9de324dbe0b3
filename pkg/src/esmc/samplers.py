"""Markov chain samplers: random-walk Metropolis, HMC, and energy-stepping.

All three share the chain-running machinery.  The energy-stepping sampler
(ESMC) is HMC with the leapfrog proposal replaced by the exact flow of the
terraced potential: that flow conserves the terraced Hamiltonian to
round-off, so the Metropolis correction always accepts and no
accept/reject draw is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, NamedTuple

import numpy as np

from .core import MassSpec, PhasePoint, as_state, chain_rng, kinetic_energy
from .integrators import (
    IntegratorError,
    TerraceSpec,
    energy_trajectory,
    leapfrog_trajectory,
    terraced_hamiltonian,
)

__all__ = [
    "Chain",
    "EsmcParams",
    "HmcParams",
    "RwmcParams",
    "SamplerError",
    "esmc_step",
    "hmc_step",
    "make_sampler_params",
    "run_chain",
    "run_chains",
    "rwmc_step",
]


class SamplerError(Exception):
    """A proposal could not be generated (retry budget exhausted)."""


@dataclass(frozen=True)
class RwmcParams:
    """Symmetric Gaussian random-walk proposal.

    ``proposal_cov`` is a scalar variance, a per-component variance vector,
    or a full SPD covariance matrix.
    """

    proposal_cov: float | np.ndarray
    name: ClassVar[str] = "rwmc"

    def __post_init__(self):
        cov = self.proposal_cov
        if np.ndim(cov) == 0:
            if not float(cov) > 0:
                raise ValueError("scalar proposal variance must be positive")
            return
        arr = np.asarray(cov, dtype=float)
        if arr.ndim == 1:
            if arr.size == 0 or np.any(arr <= 0):
                raise ValueError("diagonal proposal variances must be positive")
        elif arr.ndim == 2:
            if arr.shape[0] != arr.shape[1]:
                raise ValueError("proposal covariance matrix must be square")
        else:
            raise ValueError("proposal_cov must be a scalar, vector, or matrix")

    def settings(self) -> dict:
        cov = self.proposal_cov
        if np.ndim(cov) == 0:
            return {"proposal_cov": float(cov)}
        return {"proposal_cov": np.asarray(cov).tolist()}


@dataclass(frozen=True)
class HmcParams:
    """Leapfrog proposal with step dt over trajectory length T."""

    dt: float
    T: float
    name: ClassVar[str] = "hmc"

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    def settings(self) -> dict:
        return {"dt": self.dt, "T": self.T}


@dataclass(frozen=True)
class EsmcParams:
    """Terraced-flow proposal with terrace height h over duration T."""

    h: float
    T: float
    max_retries: int = 10
    max_segments: int = 10_000_000
    name: ClassVar[str] = "esmc"

    def __post_init__(self):
        if not (self.h > 0 and self.T > 0):
            raise ValueError("h and T must be positive")

    def terrace(self) -> TerraceSpec:
        return TerraceSpec(h=self.h, max_segments=self.max_segments)

    def settings(self) -> dict:
        return {"h": self.h, "T": self.T}


SamplerParams = RwmcParams | HmcParams | EsmcParams


def make_sampler_params(name: str, **kw) -> SamplerParams:
    """Build sampler parameters from a plain name + keyword mapping."""
    if name == "rwmc":
        return RwmcParams(**kw)
    if name == "hmc":
        return HmcParams(**kw)
    if name == "esmc":
        return EsmcParams(**kw)
    raise ValueError(f"unknown sampler {name!r}; expected rwmc, hmc or esmc")


def _proposal_offset(cov, dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(dim)
    if np.ndim(cov) == 0:
        c = float(cov)
        if not c > 0:
            raise ValueError("scalar proposal variance must be positive")
        return math.sqrt(c) * z
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 1:
        if cov.shape[0] != dim or np.any(cov <= 0):
            raise ValueError("diagonal proposal variances must be positive, length dim")
        return np.sqrt(cov) * z
    if cov.shape != (dim, dim):
        raise ValueError(f"proposal covariance shape {cov.shape} != ({dim}, {dim})")
    return np.linalg.cholesky(cov) @ z


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    """Metropolis decision for a given log acceptance ratio."""
    u = rng.random()
    if math.isnan(log_ratio):
        return False
    if log_ratio >= 0.0:
        return True
    return u > 0.0 and math.log(u) < log_ratio


def rwmc_step(q, target, params: RwmcParams, rng: np.random.Generator):
    """One random-walk Metropolis step.  Returns (next position, accepted)."""
    q = np.asarray(q, dtype=float)
    proposal = q + _proposal_offset(params.proposal_cov, q.shape[0], rng)
    log_ratio = float(target.potential(q)) - float(target.potential(proposal))
    if _accept(log_ratio, rng):
        return proposal, True
    return q, False


class HmcStepResult(NamedTuple):
    q: np.ndarray
    accepted: bool
    #: Hamiltonian of the proposal end state (nan when the integration blew up).
    hamiltonian: float


def hmc_step(q, target, mass: MassSpec, params: HmcParams, rng: np.random.Generator) -> HmcStepResult:
    """One HMC step: fresh momentum, leapfrog, Metropolis correction.

    A non-finite proposal energy (divergent leapfrog) is treated as a
    rejection; callers can count those via ``math.isnan(hamiltonian)``.
    """
    q = np.asarray(q, dtype=float)
    p = mass.sample_momentum(rng)
    v = mass.apply_inverse(p)
    h0 = float(target.potential(q)) + 0.5 * float(np.dot(p, v))
    try:
        end = leapfrog_trajectory(PhasePoint(q, v), target, mass, params.dt, params.n_steps)
        h1 = float(target.potential(end.q)) + kinetic_energy(end.v, mass)
    except IntegratorError:
        return HmcStepResult(q, False, math.nan)
    if not math.isfinite(h1):
        return HmcStepResult(q, False, math.nan)
    if _accept(h0 - h1, rng):
        return HmcStepResult(end.q, True, h1)
    return HmcStepResult(q, False, h1)


class EsmcStepResult(NamedTuple):
    q: np.ndarray
    segments: int
    #: Terraced Hamiltonian of the accepted trajectory.
    hamiltonian: float
    retries: int
    events: list | None


def esmc_step(
    q,
    target,
    mass: MassSpec,
    params: EsmcParams,
    rng: np.random.Generator,
    *,
    record_events: bool = False,
) -> EsmcStepResult:
    """One energy-stepping step: fresh momentum, exact terraced flow.

    The terraced flow conserves its Hamiltonian exactly, so the proposal is
    always accepted.  Degenerate trajectories (tangential crossings, zero
    gradients) are retried with a fresh momentum up to ``max_retries`` times;
    the retry count is reported for chain metadata.
    """
    q = np.asarray(q, dtype=float)
    terrace = params.terrace()
    for attempt in range(params.max_retries + 1):
        p = mass.sample_momentum(rng)
        v = mass.apply_inverse(p)
        try:
            res = energy_trajectory(
                PhasePoint(q, v), target, mass, terrace, params.T,
                record_events=record_events,
            )
        except IntegratorError:
            continue
        h = terraced_hamiltonian(res.end, target, mass, params.h)
        return EsmcStepResult(res.end.q, res.segments, h, attempt, res.events)
    raise SamplerError(
        f"energy-stepping proposal failed {params.max_retries + 1} times in a row"
    )


@dataclass
class Chain:
    """One sampler run: per-step states plus bookkeeping.

    ``samples[i]`` is the chain state after step i (rejected steps repeat the
    previous state bitwise).  ``hamiltonians`` holds the proposal energy per
    step for HMC and the conserved terraced energy for ESMC; ``segments`` the
    per-step segment count for ESMC.
    """

    sampler: str
    samples: np.ndarray
    accepted: np.ndarray
    burn_in: int
    hamiltonians: np.ndarray | None = None
    segments: np.ndarray | None = None
    divergences: int = 0
    retries: int = 0
    events: list | None = None

    @property
    def retained(self) -> np.ndarray:
        """Post-burn-in samples."""
        return self.samples[self.burn_in:]

    @property
    def acceptance(self) -> float:
        return float(np.mean(self.accepted))

    def __len__(self) -> int:
        return self.samples.shape[0]


def _initial_state(init, target, rng: np.random.Generator) -> np.ndarray:
    if isinstance(init, str):
        if init == "standard_normal":
            return rng.standard_normal(target.dim)
        if init == "target_exact":
            return as_state(target.sample_exact(rng))
        raise ValueError(f"unknown init {init!r}; expected standard_normal or target_exact")
    q0 = as_state(init)
    if q0.shape[0] != target.dim:
        raise ValueError(f"init has dim {q0.shape[0]}, target has dim {target.dim}")
    return q0


def run_chain(
    target,
    params: SamplerParams,
    n_samples: int,
    burn_in_fraction: float,
    init,
    seed: int,
    chain_id: int = 0,
    *,
    mass: MassSpec | None = None,
    record_events: bool = False,
) -> Chain:
    """Run a single chain and return its samples plus bookkeeping.

    Initialisation draws come from the (seed, chain_id, 0) stream and the
    sampling loop from (seed, chain_id, 1), so chains are independent and a
    rerun with the same arguments is reproducible bit for bit.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be at least 1, got {n_samples}")
    if not 0.0 <= burn_in_fraction < 1.0:
        raise ValueError(f"burn_in_fraction must be in [0, 1), got {burn_in_fraction}")
    burn_in = int(round(n_samples * burn_in_fraction))
    if burn_in >= n_samples:
        burn_in = n_samples - 1
    if mass is None:
        mass = MassSpec.identity(target.dim)

    q = _initial_state(init, target, chain_rng(seed, chain_id, 0))
    rng = chain_rng(seed, chain_id, 1)

    samples = np.empty((n_samples, target.dim))
    accepted = np.empty(n_samples, dtype=bool)
    hamiltonians = None
    segments = None
    divergences = 0
    retries = 0
    events = [] if (record_events and params.name == "esmc") else None

    if isinstance(params, RwmcParams):
        for i in range(n_samples):
            q, ok = rwmc_step(q, target, params, rng)
            samples[i] = q
            accepted[i] = ok
    elif isinstance(params, HmcParams):
        hamiltonians = np.empty(n_samples)
        for i in range(n_samples):
            q, ok, h = hmc_step(q, target, mass, params, rng)
            samples[i] = q
            accepted[i] = ok
            hamiltonians[i] = h
            if math.isnan(h):
                divergences += 1
    elif isinstance(params, EsmcParams):
        hamiltonians = np.empty(n_samples)
        segments = np.empty(n_samples, dtype=np.int64)
        for i in range(n_samples):
            step = esmc_step(q, target, mass, params, rng, record_events=record_events)
            q = step.q
            samples[i] = q
            accepted[i] = True
            hamiltonians[i] = step.hamiltonian
            segments[i] = step.segments
            retries += step.retries
            if events is not None:
                events.append(step.events)
    else:
        raise TypeError(f"unsupported sampler params {type(params).__name__}")

    return Chain(
        sampler=params.name,
        samples=samples,
        accepted=accepted,
        burn_in=burn_in,
        hamiltonians=hamiltonians,
        segments=segments,
        divergences=divergences,
        retries=retries,
        events=events,
    )


def _run_chain_args(args) -> Chain:
    return run_chain(*args[:-2], mass=args[-2], record_events=args[-1])


def run_chains(
    target,
    params: SamplerParams,
    n_chains: int,
    n_samples: int,
    burn_in_fraction: float,
    init,
    seed: int,
    *,
    mass: MassSpec | None = None,
    record_events: bool = False,
    threads: int = 1,
) -> list[Chain]:
    """Run ``n_chains`` independent chains (optionally in worker processes)."""
    if n_chains < 1:
        raise ValueError(f"n_chains must be at least 1, got {n_chains}")
    jobs = [
        (target, params, n_samples, burn_in_fraction, init, seed, cid, mass, record_events)
        for cid in range(n_chains)
    ]
    if threads <= 1 or n_chains == 1:
        return [_run_chain_args(job) for job in jobs]
    import concurrent.futures

    with concurrent.futures.ProcessPoolExecutor(max_workers=min(threads, n_chains)) as pool:
        return list(pool.map(_run_chain_args, jobs))
