"""Tests for chain diagnostics: ACF, KL, moments, symmetry, step counting."""

import math

import numpy as np
import pytest
from scipy import stats

from esmc.diagnostics import (
    BinSpec,
    angular_symmetry_stat,
    autocorrelation,
    chain_stats,
    effective_time_step,
    histogram_kl,
    moment_errors,
    pooled_retained,
)
from esmc.samplers import EsmcParams, RwmcParams, run_chain, run_chains
from esmc.targets import make_target


def test_autocorrelation_of_white_noise_decays():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(20000)
    acf = autocorrelation(x, 10)
    assert acf[0] == 1.0
    assert np.all(np.abs(acf[1:]) < 0.03)


def test_autocorrelation_of_alternating_series():
    # x = +1, -1, +1, ... has lag-1 autocorrelation -(n-1)/n.
    n = 1000
    x = np.ones(n)
    x[1::2] = -1.0
    acf = autocorrelation(x, 2)
    assert acf[1] == pytest.approx(-(n - 1) / n, abs=1e-12)
    assert acf[2] == pytest.approx((n - 2) / n, abs=1e-12)


def test_autocorrelation_constant_series_warns():
    with pytest.warns(UserWarning):
        acf = autocorrelation(np.full(100, 3.0), 5)
    np.testing.assert_array_equal(acf, np.ones(6))


def test_autocorrelation_rejects_bad_lag():
    with pytest.raises(ValueError):
        autocorrelation(np.arange(10.0), 10)
    with pytest.raises(ValueError):
        autocorrelation(np.arange(10.0), -1)
    np.testing.assert_array_equal(autocorrelation(np.arange(10.0), 0), [1.0])


def test_bin_spec_edges():
    spec = BinSpec(-1.0, 1.0, 4)
    np.testing.assert_allclose(spec.edges, [-1.0, -0.5, 0.0, 0.5, 1.0])


def test_histogram_kl_against_direct_formula():
    # Cross-check the whole pipeline against a hand computation that uses
    # scipy's exact normal CDF for the bin masses.
    target = make_target("diag_gaussian", dim=1)
    rng = np.random.default_rng(8)
    samples = rng.standard_normal(50000)
    spec = BinSpec(-4.0, 4.0, 16)
    got = histogram_kl(samples, target, spec)

    edges = spec.edges
    counts, _ = np.histogram(samples, bins=edges)
    p = counts / counts.sum()
    q = np.diff(stats.norm.cdf(edges))
    q = q / q.sum()
    expected = float(np.sum(p[p > 0] * np.log(p[p > 0] / q[p > 0])))
    assert got == pytest.approx(expected, abs=5e-4)
    assert got < 0.01


def test_histogram_kl_grows_when_samples_are_shifted():
    target = make_target("diag_gaussian", dim=1)
    rng = np.random.default_rng(8)
    samples = rng.standard_normal(20000)
    spec = BinSpec(-4.0, 4.0, 16)
    assert histogram_kl(samples + 1.0, target, spec) > histogram_kl(samples, target, spec)


def test_histogram_kl_accepts_column_vectors_and_empty_window():
    target = make_target("diag_gaussian", dim=1)
    samples = np.array([[0.1], [-0.2], [0.3]])
    spec = BinSpec(-1.0, 1.0, 4)
    assert histogram_kl(samples, target, spec) >= 0.0
    far = np.array([100.0, 101.0])
    assert histogram_kl(far, target, spec) == 0.0


def test_moment_errors_hand_example():
    # Two samples 1 and 3: mean 2, variance 2 (ddof 1). Against exact
    # moments (0, 1): e1 = |2|/1 = 2 and e2 = |(2-1)/1|/1 = 1.
    samples = np.array([[1.0], [3.0]])
    e1, e2 = moment_errors(samples, np.zeros(1), np.ones(1))
    assert e1 == pytest.approx(2.0, rel=1e-12)
    assert e2 == pytest.approx(1.0, rel=1e-12)


def test_moment_errors_multivariate_scaling():
    # e1 carries 1/N * ||mean||, e2 the rms of relative variance errors / N.
    samples = np.array([[2.0, 0.0], [2.0, 0.0], [2.0, 0.0], [2.0, 0.0]])
    # ddof-1 variance of constant columns is 0, exact variances are 1 and 4.
    e1, e2 = moment_errors(samples, np.zeros(2), np.array([1.0, 4.0]))
    assert e1 == pytest.approx(1.0, rel=1e-12)  # ||(2,0)|| / 2
    assert e2 == pytest.approx(math.sqrt(2.0) / 2.0, rel=1e-12)


def test_angular_symmetry_stat_extremes():
    m = 8
    # Perfectly even angular coverage.
    angles = np.linspace(0.0, 2.0 * math.pi, 4000, endpoint=False)
    even = np.column_stack([np.cos(angles), np.sin(angles)])
    assert angular_symmetry_stat(even, m) == pytest.approx(0.0, abs=1e-12)
    # All mass in one sector.
    lump = np.tile([1.0, 0.05], (500, 1))
    assert angular_symmetry_stat(lump, m) == pytest.approx(math.sqrt(m - 1) / m, rel=1e-12)


def test_effective_time_step_formula():
    assert effective_time_step(1000, 100, 10.0) == pytest.approx(1.0, rel=1e-15)
    assert effective_time_step(4000, 100, 10.0) == pytest.approx(0.25, rel=1e-15)
    with pytest.raises(ValueError):
        effective_time_step(0, 100, 10.0)


def test_pooled_retained_concatenates_post_burn_in():
    target = make_target("diag_gaussian", dim=2)
    chains = run_chains(target, RwmcParams(proposal_cov=0.5), 3, 40, 0.25,
                        "standard_normal", 2)
    pooled = pooled_retained(chains)
    assert pooled.shape == (3 * 30, 2)
    np.testing.assert_array_equal(pooled[:30], chains[0].retained)


def test_chain_stats_fields():
    target = make_target("bimodal1d")
    chain = run_chain(target, EsmcParams(h=0.35, T=10.0), 300, 0.1,
                      "standard_normal", seed=6)
    stats_out = chain_stats(
        chain, target, chain_id=4, max_lag=20,
        kl_bins=BinSpec(-12.0, 10.0, 50), proposal_T=10.0,
    )
    assert stats_out.chain_id == 4
    assert stats_out.sampler == "esmc"
    assert stats_out.length == 300
    assert stats_out.burn_in == 30
    assert stats_out.acceptance == 1.0
    assert stats_out.acf.shape == (21,)
    assert stats_out.kl is not None and stats_out.kl >= 0.0
    assert stats_out.segments_total is not None and stats_out.segments_total > 0
    assert stats_out.dt_effective == pytest.approx(
        10.0 * 300 / stats_out.segments_total, rel=1e-12
    )
    payload = stats_out.to_dict()
    assert isinstance(payload["mean"], list)
    assert isinstance(payload["acf"], list)


def test_chain_stats_without_optional_diagnostics():
    target = make_target("diag_gaussian", dim=3)
    chain = run_chain(target, RwmcParams(proposal_cov=0.2), 120, 0.1,
                      "standard_normal", seed=6)
    stats_out = chain_stats(chain, target, max_lag=10)
    assert stats_out.kl is None
    assert stats_out.angular_std is None
    assert stats_out.dt_effective is None
    assert stats_out.e1 is not None and stats_out.e2 is not None
