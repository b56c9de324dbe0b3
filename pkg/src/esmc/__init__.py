"""Energy-stepping Monte Carlo sampling library.

Provides an exact-energy piecewise-linear Hamiltonian proposal (terraced
potential flow), plus random-walk and leapfrog HMC baselines, a set of
benchmark target densities, chain diagnostics, and an experiment runner
with a figure-rendering report path.
"""

from .core import (
    EvaluationError,
    MassSpec,
    PhasePoint,
    chain_rng,
    hamiltonian,
    kinetic_energy,
)
from .integrators import (
    CrossingEvent,
    IntegratorError,
    TerraceSpec,
    TrajectoryResult,
    energy_step,
    energy_trajectory,
    leapfrog_trajectory,
    smallest_crossing,
    terraced_hamiltonian,
    terraced_potential,
    update_velocity,
)
from .samplers import (
    Chain,
    EsmcParams,
    HmcParams,
    RwmcParams,
    SamplerError,
    esmc_step,
    hmc_step,
    make_sampler_params,
    run_chain,
    run_chains,
    rwmc_step,
)
from .targets import TargetDensity, make_target, target_names
from .diagnostics import (
    BinSpec,
    ChainStats,
    angular_symmetry_stat,
    autocorrelation,
    chain_stats,
    effective_time_step,
    histogram_kl,
    moment_errors,
    pooled_retained,
)

__version__ = "0.1.0"

__all__ = [
    "BinSpec",
    "Chain",
    "ChainStats",
    "CrossingEvent",
    "EsmcParams",
    "EvaluationError",
    "HmcParams",
    "IntegratorError",
    "MassSpec",
    "PhasePoint",
    "RwmcParams",
    "SamplerError",
    "TargetDensity",
    "TerraceSpec",
    "TrajectoryResult",
    "angular_symmetry_stat",
    "autocorrelation",
    "chain_rng",
    "chain_stats",
    "effective_time_step",
    "energy_step",
    "energy_trajectory",
    "esmc_step",
    "hamiltonian",
    "histogram_kl",
    "hmc_step",
    "kinetic_energy",
    "leapfrog_trajectory",
    "make_sampler_params",
    "make_target",
    "moment_errors",
    "pooled_retained",
    "run_chain",
    "run_chains",
    "rwmc_step",
    "smallest_crossing",
    "target_names",
    "terraced_hamiltonian",
    "terraced_potential",
    "update_velocity",
]
