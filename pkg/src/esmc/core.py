"""Phase-space types, mass-matrix algebra and RNG stream derivation.

Positions and velocities are plain 1-D float64 numpy arrays.  The mass
matrix enters every sampler through three operations (apply, apply-inverse,
momentum sampling), so it is wrapped in a small class that supports the
identity, diagonal and dense SPD cases without exposing the representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "EvaluationError",
    "MassSpec",
    "PhasePoint",
    "as_state",
    "chain_rng",
    "hamiltonian",
    "kinetic_energy",
    "momentum_kinetic_energy",
    "sample_momentum",
]


class EvaluationError(Exception):
    """A target evaluation produced a non-finite value.

    Carries the offending position so callers can report where the target
    broke down.
    """

    def __init__(self, message: str, q: np.ndarray | None = None):
        super().__init__(message)
        self.q = None if q is None else np.asarray(q, dtype=float)


def as_state(x) -> np.ndarray:
    """Coerce ``x`` to a 1-D float64 state vector."""
    q = np.asarray(x, dtype=float)
    if q.ndim == 0:
        q = q.reshape(1)
    if q.ndim != 1:
        raise ValueError(f"state vector must be 1-D, got shape {q.shape}")
    return q


@dataclass(frozen=True)
class PhasePoint:
    """Position, velocity and time of a trajectory point."""

    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", as_state(self.q))
        object.__setattr__(self, "v", as_state(self.v))
        object.__setattr__(self, "t", float(self.t))
        if self.q.shape != self.v.shape:
            raise ValueError(
                f"q and v dimensions differ: {self.q.shape} vs {self.v.shape}"
            )
        if not math.isfinite(self.t):
            raise ValueError(f"time must be finite, got {self.t}")

    @property
    def dim(self) -> int:
        return self.q.shape[0]


class MassSpec:
    """SPD mass matrix in identity, diagonal or dense form.

    Construct via :meth:`identity`, :meth:`diagonal` or :meth:`dense`.  The
    three forms share the interface used by the samplers: ``apply`` (x -> Mx),
    ``apply_inverse`` (x -> M^-1 x) and momentum sampling from N(0, M).
    """

    def __init__(self, kind: str, dim: int, diag=None, matrix=None):
        self.kind = kind
        self.dim = int(dim)
        self._diag = diag
        self._sqrt_diag = None if diag is None else np.sqrt(diag)
        self._matrix = matrix
        if matrix is not None:
            # Cholesky both samples momenta (L z ~ N(0, M)) and solves M x = b.
            self._cho = scipy.linalg.cho_factor(matrix, lower=True)
            self._chol = np.tril(self._cho[0])
        else:
            self._cho = None
            self._chol = None

    @classmethod
    def identity(cls, dim: int) -> "MassSpec":
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        return cls("identity", dim)

    @classmethod
    def diagonal(cls, diag) -> "MassSpec":
        d = as_state(diag)
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("diagonal mass entries must be finite and positive")
        return cls("diagonal", d.shape[0], diag=d)

    @classmethod
    def dense(cls, matrix) -> "MassSpec":
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"dense mass must be a square matrix, got {m.shape}")
        if not np.allclose(m, m.T, rtol=1e-12, atol=1e-12):
            raise ValueError("dense mass must be symmetric")
        try:
            return cls("dense", m.shape[0], matrix=m)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise ValueError("dense mass must be positive definite") from exc

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = as_state(x)
        if x.shape[0] != self.dim:
            raise ValueError(f"vector has dim {x.shape[0]}, mass has dim {self.dim}")
        return x

    def apply(self, x) -> np.ndarray:
        """Return M x."""
        x = self._check_dim(x)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "diagonal":
            return self._diag * x
        return self._matrix @ x

    def apply_inverse(self, x) -> np.ndarray:
        """Return M^-1 x."""
        x = self._check_dim(x)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "diagonal":
            return x / self._diag
        return scipy.linalg.cho_solve(self._cho, x)

    def sample_momentum(self, rng: np.random.Generator) -> np.ndarray:
        """Draw p ~ N(0, M)."""
        z = rng.standard_normal(self.dim)
        if self.kind == "identity":
            return z
        if self.kind == "diagonal":
            return self._sqrt_diag * z
        return self._chol @ z


def kinetic_energy(v, mass: MassSpec) -> float:
    """Velocity-form kinetic energy (1/2) v . M v."""
    v = as_state(v)
    return 0.5 * float(np.dot(v, mass.apply(v)))


def momentum_kinetic_energy(p, mass: MassSpec) -> float:
    """Momentum-form kinetic energy (1/2) p . M^-1 p."""
    p = as_state(p)
    return 0.5 * float(np.dot(p, mass.apply_inverse(p)))


def sample_momentum(mass: MassSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a momentum p ~ N(0, M)."""
    return mass.sample_momentum(rng)


def hamiltonian(point: PhasePoint, target, mass: MassSpec) -> float:
    """Total energy V(q) + (1/2) v . M v.

    The additive constant from the mass determinant is dropped: it cancels
    in every acceptance ratio because the mass is fixed within a chain.
    """
    pot = float(target.potential(point.q))
    if not math.isfinite(pot):
        raise EvaluationError(f"potential is non-finite ({pot})", point.q)
    return pot + kinetic_energy(point.v, mass)


def chain_rng(seed: int, chain_id: int, phase: int = 0) -> np.random.Generator:
    """Independent generator for one chain.

    Streams are derived from (seed, chain_id, phase) via numpy's
    SeedSequence, so distinct chains of the same run never share a stream
    and reruns with the same arguments reproduce draws bit for bit.
    Phase 0 is reserved for chain initialisation, phase 1 for the sampling
    loop.
    """
    for name, value in (("seed", seed), ("chain_id", chain_id), ("phase", phase)):
        if not isinstance(value, (int, np.integer)) or value < 0:
            raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain_id), int(phase)]))
