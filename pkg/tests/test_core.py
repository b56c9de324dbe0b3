"""Tests for states, mass matrices, energies, and RNG streams."""

import numpy as np
import pytest

from esmc.core import (
    EvaluationError,
    MassSpec,
    PhasePoint,
    as_state,
    chain_rng,
    hamiltonian,
    kinetic_energy,
)
from esmc.targets import make_target


def test_as_state_coerces_to_float64_vector():
    out = as_state([1, 2, 3])
    assert out.dtype == np.float64
    assert out.shape == (3,)
    np.testing.assert_array_equal(out, [1.0, 2.0, 3.0])


def test_as_state_rejects_matrices():
    with pytest.raises(ValueError):
        as_state(np.zeros((2, 2)))


def test_phase_point_dim_and_validation():
    p = PhasePoint(np.zeros(3), np.ones(3), 0.5)
    assert p.dim == 3
    assert p.t == 0.5
    with pytest.raises(ValueError):
        PhasePoint(np.zeros(3), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        PhasePoint(np.zeros(2), np.zeros(2), np.inf)


def test_identity_mass_round_trip():
    mass = MassSpec.identity(4)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(4)
    np.testing.assert_array_equal(mass.apply(v), v)
    np.testing.assert_array_equal(mass.apply_inverse(v), v)


def test_diagonal_mass_round_trip():
    d = np.array([1.0, 2.0, 4.0])
    mass = MassSpec.diagonal(d)
    v = np.array([1.0, 1.0, 1.0])
    np.testing.assert_allclose(mass.apply(v), d)
    np.testing.assert_allclose(mass.apply_inverse(mass.apply(v)), v, rtol=1e-14)
    with pytest.raises(ValueError):
        MassSpec.diagonal([1.0, -1.0])


def test_dense_mass_round_trip_and_rejects_non_spd():
    m = np.array([[2.0, 0.5], [0.5, 1.0]])
    mass = MassSpec.dense(m)
    v = np.array([0.3, -1.2])
    np.testing.assert_allclose(mass.apply(v), m @ v, rtol=1e-14)
    np.testing.assert_allclose(mass.apply_inverse(m @ v), v, rtol=1e-12)
    with pytest.raises(ValueError):
        MassSpec.dense(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_kinetic_energy_hand_values():
    v = np.array([1.0, 2.0])
    assert kinetic_energy(v, MassSpec.identity(2)) == pytest.approx(2.5, rel=1e-15)
    assert kinetic_energy(v, MassSpec.diagonal([2.0, 0.5])) == pytest.approx(
        0.5 * (2.0 + 2.0), rel=1e-15
    )


def test_sample_momentum_matches_mass_covariance():
    # For momenta p ~ N(0, M) the sample covariance should approach M.
    m = np.array([[2.0, 0.6], [0.6, 1.0]])
    mass = MassSpec.dense(m)
    rng = np.random.default_rng(42)
    draws = np.array([mass.sample_momentum(rng) for _ in range(20000)])
    cov = np.cov(draws.T)
    np.testing.assert_allclose(cov, m, atol=0.06)


def test_hamiltonian_is_potential_plus_kinetic():
    target = make_target("diag_gaussian", dim=2)
    mass = MassSpec.identity(2)
    q = np.array([1.0, 0.5])
    v = np.array([0.3, -0.2])
    expected = 0.5 * (1.0 + 4.0 * 0.25) + 0.5 * (0.09 + 0.04)
    assert hamiltonian(PhasePoint(q, v, 0.0), target, mass) == pytest.approx(
        expected, rel=1e-14
    )


def test_hamiltonian_rejects_non_finite_potential():
    class Bad:
        dim = 1

        def potential(self, q):
            return float("inf")

    with pytest.raises(EvaluationError):
        hamiltonian(PhasePoint(np.zeros(1), np.zeros(1), 0.0), Bad(), MassSpec.identity(1))


def test_chain_rng_streams_are_reproducible_and_distinct():
    a = chain_rng(7, 0, 1).standard_normal(5)
    b = chain_rng(7, 0, 1).standard_normal(5)
    c = chain_rng(7, 1, 1).standard_normal(5)
    d = chain_rng(7, 0, 0).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_chain_rng_rejects_negative_ids():
    with pytest.raises(ValueError):
        chain_rng(-1, 0, 0)
    with pytest.raises(ValueError):
        chain_rng(0, -2, 0)
