"""Tests for jump measures: integrals, sampling laws, quadrature rules."""
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import kstest, ks_2samp

from marcusfp.levy import (AlphaStable, CompoundPoisson, JumpEvent,
                           LevyMeasure, LevyTriplet, NullMeasure, SumMeasure,
                           measure_quadrature, normal_density, rng_from_seed,
                           sample_brownian_increment, sample_jumps,
                           small_jump_compensation, uniform_density)


def test_brownian_increment_zero_variance_is_exact():
    rng = rng_from_seed(0)
    assert sample_brownian_increment(0.0, 1.0, rng) == 0.0


@pytest.mark.parametrize("A,dt", [(1.0, 1.0), (4.0, 0.25)])
def test_brownian_increment_variance(A, dt):
    rng = rng_from_seed(5)
    draws = np.array([sample_brownian_increment(A, dt, rng)
                      for _ in range(200_000)])
    assert abs(np.var(draws) / (A * dt) - 1.0) < 0.01


def test_compensation_uniform_band():
    # lambda * integral of y over (0.1, 1) for the uniform(0.5, 0.8) density
    nu = CompoundPoisson(1.0, uniform_density(0.5, 0.8))
    assert small_jump_compensation(nu, 0.1) == pytest.approx(0.65, abs=1e-12)


def test_compensation_symmetric_measures_vanish():
    assert small_jump_compensation(AlphaStable(1.5), 0.01) == 0.0
    assert small_jump_compensation(
        CompoundPoisson(2.0, uniform_density(-1.0, 1.0)), 0.1) == 0.0
    assert small_jump_compensation(NullMeasure(), 0.5) == 0.0


def test_alpha_stable_closed_forms_match_direct_integration():
    nu = AlphaStable(1.5, scale=0.7)
    for eps in (0.1, 0.5, 2.0):
        ref, _ = integrate.quad(lambda y: nu.density(np.array([y]))[0],
                                eps, np.inf)
        assert nu.tail_mass(eps) == pytest.approx(2.0 * ref, rel=1e-10)
    for d in (0.05, 0.3):
        ref, _ = integrate.quad(
            lambda y: 0.5 * y * y * nu.density(np.array([y]))[0], -d, d,
            points=[0.0], limit=200)
        assert nu.half_second_moment_below(d) == pytest.approx(ref, rel=1e-8)


def test_compound_poisson_density_must_normalize():
    half = normal_density(0.0, 1.0)
    bad = type(half)(pdf=lambda y: 0.5 * half.pdf(y), sampler=half.sampler,
                     support=half.support)
    with pytest.raises(ValueError):
        CompoundPoisson(1.0, bad)


def test_finite_jump_intensity_integral():
    # integral of min(y^2, 1) against the measure, quadrature vs closed form
    alpha, scale = 1.5, 1.0
    nu = AlphaStable(alpha, scale)
    analytic = 2.0 * scale / (2.0 - alpha) + 2.0 * scale / alpha
    delta = 1e-4
    rule = nu.quadrature(delta, 1e6, 400)
    est = rule.apply(lambda y: np.minimum(y * y, 1.0)) \
        + 2.0 * nu.half_second_moment_below(delta)
    assert est == pytest.approx(analytic, rel=1e-4)


def test_quadrature_total_mass_compound_poisson():
    nu = CompoundPoisson(3.0, uniform_density(0.4, 0.9))
    rule = measure_quadrature(nu, 0.05, 2.0, 40)
    assert rule.apply(lambda y: np.ones_like(y)) == pytest.approx(3.0,
                                                                  abs=1e-6)


def test_quadrature_alpha_stable_tail_mass():
    nu = AlphaStable(0.5)
    delta, ymax = 0.01, 100.0
    rule = measure_quadrature(nu, delta, ymax, 60)
    ref = 2.0 * (delta ** -0.5 - ymax ** -0.5) / 0.5
    assert rule.apply(lambda y: np.ones_like(y)) == pytest.approx(ref,
                                                                  rel=1e-4)


def test_quadrature_odd_integrand_cancels():
    for nu in (AlphaStable(1.2), CompoundPoisson(2.0,
                                                 normal_density(0.0, 0.5))):
        rule = measure_quadrature(nu, 0.01, 10.0, 40)
        scale = rule.apply(lambda y: np.abs(y))
        assert abs(rule.apply(lambda y: y)) <= 1e-12 * max(scale, 1.0)


def test_quadrature_rejects_bad_window():
    with pytest.raises(ValueError):
        measure_quadrature(AlphaStable(1.5), 1.0, 0.5, 10)


def test_auto_ymax_hits_tail_target():
    for nu in (AlphaStable(0.8), CompoundPoisson(1.0,
                                                 normal_density(0.0, 0.3))):
        delta = 1e-3
        ymax = nu.auto_ymax(delta)
        assert nu.tail_mass(ymax) <= 1.000001e-6 * nu.tail_mass(delta)


def test_sample_jumps_null_measure_empty():
    assert sample_jumps(NullMeasure(), 10.0, 0.1, rng_from_seed(1)) == []


def test_sample_jumps_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        sample_jumps(AlphaStable(1.5), 1.0, 0.0, rng_from_seed(1))


def test_sample_jumps_events_sorted_in_window():
    nu = CompoundPoisson(5.0, normal_density(0.0, 0.3))
    events = sample_jumps(nu, 4.0, 1e-6, rng_from_seed(3))
    times = [e.time for e in events]
    assert times == sorted(times)
    assert all(0.0 <= t <= 4.0 for t in times)
    assert all(e.size != 0.0 for e in events)


def test_sample_jumps_poisson_mean_compound():
    nu = CompoundPoisson(2.0, normal_density(0.0, 0.5))
    rng = rng_from_seed(7)
    counts = [len(sample_jumps(nu, 10.0, 1e-9, rng)) for _ in range(20_000)]
    assert abs(np.mean(counts) / 20.0 - 1.0) < 0.01


def test_sample_jumps_poisson_mean_alpha_stable():
    nu = AlphaStable(1.5)
    eps, horizon = 0.1, 0.5
    rate = nu.tail_mass(eps)
    assert rate == pytest.approx(2.0 * 0.1 ** -1.5 / 1.5, rel=1e-12)
    rng = rng_from_seed(11)
    counts = [len(sample_jumps(nu, horizon, eps, rng)) for _ in range(20_000)]
    assert abs(np.mean(counts) / (rate * horizon) - 1.0) < 0.01


def test_alpha_stable_size_law():
    # |Y| has tail (eps/t)^alpha above the cut; map to uniform and KS-test
    nu = AlphaStable(1.5)
    sizes = nu.sample_sizes(rng_from_seed(13), 100_000, 0.1)
    u = (0.1 / np.abs(sizes)) ** 1.5
    assert kstest(u, "uniform").pvalue > 0.01
    # signs are symmetric
    assert abs(np.mean(np.sign(sizes))) < 5.0 / math.sqrt(len(sizes))


def test_truncation_nesting_in_distribution():
    # sizes above the coarser cut from a fine-cut run follow the same law
    nu = AlphaStable(1.2)
    fine = nu.sample_sizes(rng_from_seed(17), 100_000, 0.05)
    coarse = nu.sample_sizes(rng_from_seed(19), 40_000, 0.2)
    assert ks_2samp(fine[np.abs(fine) > 0.2], coarse).pvalue > 0.01


def test_bulk_jump_sums_match_generic_path():
    nu = AlphaStable(1.5)
    counts = rng_from_seed(23).poisson(3.0, 30_000)
    fast = nu.jump_sums(rng_from_seed(29), counts.copy(), 0.05)
    generic = LevyMeasure.jump_sums(nu, rng_from_seed(31), counts.copy(), 0.05)
    assert np.all(fast[counts == 0] == 0.0)
    assert ks_2samp(fast, generic).pvalue > 0.01


def test_increment_sums_null_and_mean():
    assert np.all(NullMeasure().increment_sums(rng_from_seed(1), 100, 0.1,
                                               0.01) == 0.0)
    nu = CompoundPoisson(2.0, normal_density(0.4, 0.1))
    s = nu.increment_sums(rng_from_seed(37), 200_000, 0.5, 1e-6)
    # mean of the window sum is lambda * dt * E[Y]
    assert np.mean(s) == pytest.approx(2.0 * 0.5 * 0.4, abs=0.005)


def test_sum_measure_combines_terms():
    a = AlphaStable(1.5, 0.5)
    c = CompoundPoisson(1.0, normal_density(0.0, 0.3))
    s = SumMeasure((a, c))
    assert s.tail_mass(0.1) == pytest.approx(a.tail_mass(0.1)
                                             + c.tail_mass(0.1))
    assert s.is_symmetric
    rule = s.quadrature(0.01, 10.0, 30)
    assert rule.apply(lambda y: np.ones_like(y)) == pytest.approx(
        s.tail_mass(0.01) - s.tail_mass(10.0), rel=1e-3)


def test_triplet_rejects_negative_variance():
    with pytest.raises(ValueError):
        LevyTriplet(0.0, -1.0, NullMeasure())


def test_seeded_draws_reproduce_bit_for_bit():
    nu = AlphaStable(1.5)
    a = sample_jumps(nu, 2.0, 0.05, rng_from_seed(41))
    b = sample_jumps(nu, 2.0, 0.05, rng_from_seed(41))
    assert a == b
    sa = nu.sample_sizes(rng_from_seed(43), 1000, 0.1)
    sb = nu.sample_sizes(rng_from_seed(43), 1000, 0.1)
    assert np.array_equal(sa, sb)
