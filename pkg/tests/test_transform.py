"""Tests for the piecewise transform and the jump map built from it."""
import math

import numpy as np
import pytest

from marcusfp.errors import (IllConditioned, NonConvergence, SeriesDivergence,
                             ZeroOfSigma)
from marcusfp.transform import (SigmaFunction, TransformAtlas, constant_sigma,
                                linear_sigma, marcus_map_ode,
                                marcus_map_ode_vec, one_plus_x2_sigma,
                                sine_sigma)


def test_forward_map_linear_anchor():
    # for sigma(x)=x on (0, inf) with anchor 1: h(e) = 1 and h^{-1}(1) = e
    _, atlas = linear_sigma(1.0)
    assert atlas.h_forward(math.e) == pytest.approx(1.0, abs=1e-12)
    assert atlas.h_inverse(1.0, atlas.sigma.interval_index(math.e)) \
        == pytest.approx(math.e, rel=1e-12)


def test_forward_map_constant_anchor():
    _, atlas = constant_sigma(1.5)
    assert atlas.h_forward(1.5) == pytest.approx(1.0, abs=1e-12)
    assert atlas.h_forward(0.0) == pytest.approx(0.0, abs=1e-15)


def test_forward_map_superlinear_anchor():
    _, atlas = one_plus_x2_sigma()
    assert atlas.h_forward(1.0) == pytest.approx(math.pi / 4.0, rel=1e-12)
    assert atlas.h_inverse(0.0, 0) == pytest.approx(0.0, abs=1e-12)


def test_forward_map_rejects_zero_argument():
    sig, atlas = linear_sigma(1.0)
    with pytest.raises(ZeroOfSigma):
        sig.interval_index(0.0)
    with pytest.raises(ZeroOfSigma):
        atlas.h_forward(0.0)


def test_numeric_integration_matches_closed_form():
    # same coefficient, no closed forms supplied: the quadrature/brentq
    # path must agree with the analytic transform
    sig = SigmaFunction(func=lambda x: np.asarray(x, float),
                        deriv=lambda x: np.ones_like(np.asarray(x, float)),
                        zeros=(0.0,), name="x-numeric")
    atlas = TransformAtlas(sig)
    ref_sig, ref = linear_sigma(1.0)
    for x in (0.3, 1.0, math.e, 7.5, -2.0):
        i = sig.interval_index(x)
        assert atlas.h_forward(x) == pytest.approx(ref.h_forward(x),
                                                   abs=1e-10)
        assert atlas.h_tilde(x, 0.8) == pytest.approx(ref.h_tilde(x, 0.8),
                                                      rel=1e-10)
        assert atlas.h_inverse(atlas.h_forward(x), i) == pytest.approx(
            x, rel=1e-10)


def test_jump_map_fixes_zeros():
    _, lin = linear_sigma(2.0)
    assert lin.h_tilde(0.0, 1.7) == 0.0
    _, sin_at = sine_sigma()
    for z in (0.0, math.pi, -math.pi):
        assert sin_at.h_tilde(z, -0.9) == z


def test_jump_map_reference_ode():
    # sigma(x)=x, r=0.7, x=2: the time-1 flow of dy/dz = r y is 2 e^{0.7}
    sig, atlas = linear_sigma(1.0)
    ref = 2.0 * math.exp(0.7)
    assert marcus_map_ode(sig, 2.0, 0.7) == pytest.approx(ref, rel=1e-9)
    assert atlas.h_tilde(2.0, 0.7) == pytest.approx(ref, rel=1e-12)


def test_jump_map_blowup_raises():
    sig, atlas = one_plus_x2_sigma()
    with pytest.raises(NonConvergence):
        atlas.h_tilde(2.0, 1.0)  # atan(2) + 1 leaves (-pi/2, pi/2)


@pytest.mark.parametrize("make,dz", [
    (lambda: linear_sigma(1.0), 1.0),
    (lambda: linear_sigma(2.0), 2.0),
])
def test_series_coefficients_linear(make, dz):
    _, atlas = make()
    k = np.arange(9)
    assert np.allclose(atlas.phi_coefficients(0, 8), dz ** k, rtol=1e-14)


def test_series_coefficients_sine_alternate_by_zero():
    sig, atlas = sine_sigma()
    i0 = sig.zeros.index(0.0)
    ipi = sig.zeros.index(math.pi)
    assert np.allclose(atlas.phi_coefficients(i0, 6), np.ones(7))
    assert np.allclose(atlas.phi_coefficients(ipi, 6),
                       (-1.0) ** np.arange(7))


def test_series_coefficients_numeric_oracle_agrees():
    # nested-differentiation path, independent of the closed recursion
    for make, idx in ((lambda: linear_sigma(2.0), 0), (sine_sigma, None)):
        sig, atlas = make()
        i = sig.zeros.index(0.0) if idx is None else idx
        fd = atlas.phi_coefficients_fd(i, 6)
        cf = atlas.phi_coefficients(i, 6)
        assert np.max(np.abs(fd - cf) / np.maximum(np.abs(cf), 1.0)) < 1e-6


def test_series_ill_conditioning_detected():
    # a kink at the zero breaks the smoothness the recursion needs
    sig = SigmaFunction(func=lambda x: np.asarray(x, float)
                        * (1.0 + 0.2 * np.abs(np.asarray(x, float))),
                        deriv=lambda x: 1.0 + 0.4 * np.abs(np.asarray(x,
                                                                      float)),
                        zeros=(0.0,), name="kinked")
    atlas = TransformAtlas(sig)
    with pytest.raises(IllConditioned):
        atlas.phi_coefficients_fd(0, 6)


def test_series_sums_to_exponential():
    _, atlas = linear_sigma(1.0)
    for y in np.linspace(-2.0, 2.0, 21):
        assert atlas.series_dx_at_zero(0, y) == pytest.approx(math.exp(y),
                                                              abs=1e-10)


def test_series_truncation_guard():
    _, atlas = linear_sigma(1.0)
    with pytest.raises(SeriesDivergence):
        atlas.series_dx_at_zero(0, 6.0, k_max=8)


def test_jump_map_x_derivative():
    _, atlas = linear_sigma(1.0)
    # at the zero the derivative is the series limit e^y
    assert atlas.h_tilde_dx(0.0, 0.8) == pytest.approx(math.exp(0.8),
                                                       rel=1e-12)
    # away from zeros: matches a centered difference of the map itself
    for x, y in ((1.3, 0.6), (-0.4, -1.1), (5.0, 0.2)):
        h = 1e-6 * max(abs(x), 1.0)
        fd = (atlas.h_tilde(x + h, y) - atlas.h_tilde(x - h, y)) / (2.0 * h)
        assert atlas.h_tilde_dx(x, y) == pytest.approx(fd, rel=1e-7)


def test_jump_map_derivative_two_sided_limit():
    _, atlas = linear_sigma(1.0)
    y = 1.3
    ref = atlas.series_dx_at_zero(0, y)
    for x in (1e-3, 1e-6, -1e-3, -1e-6):
        assert atlas.h_tilde_dx(x, y) == pytest.approx(ref, rel=1e-6)


CASES = [
    ("linear", lambda: linear_sigma(1.0), (0.1, 5.0), 2.0),
    ("linear-2", lambda: linear_sigma(2.0), (0.1, 5.0), 1.0),
    ("constant", lambda: constant_sigma(1.5), (-5.0, 5.0), 2.0),
    ("sine", sine_sigma, (0.05, math.pi - 0.05), 2.0),
    ("superlinear", one_plus_x2_sigma, (-1.5, 1.5), 0.3),
]


@pytest.mark.parametrize("name,make,xr,rmax",
                         CASES, ids=[c[0] for c in CASES])
def test_identity_suite(name, make, xr, rmax):
    sig, atlas = make()
    rng = np.random.default_rng(101)
    n = 500
    x = rng.uniform(*xr, n)
    y = rng.uniform(-rmax, rmax, n)
    zt = atlas.h_tilde_vec(x, y)
    # additivity in transformed coordinates
    chain = np.array([atlas.h_forward(b) - atlas.h_forward(a)
                      for a, b in zip(x, zt)]) - y
    assert np.max(np.abs(chain)) < 1e-10
    # flow group property
    y2 = 0.3 * rng.uniform(-rmax, rmax, n)
    grp = atlas.h_tilde_vec(zt, y2) - atlas.h_tilde_vec(x, y + y2)
    assert np.max(np.abs(grp) / np.maximum(np.abs(zt), 1.0)) < 1e-10
    # independent ODE oracle
    ode = marcus_map_ode_vec(sig, x, y)
    assert np.max(np.abs(zt - ode) / np.maximum(np.abs(ode), 1.0)) < 1e-9
    # states never cross a zero of the coefficient
    if sig.zeros:
        zeros = np.array(sig.zeros)
        assert np.array_equal(np.searchsorted(zeros, x),
                              np.searchsorted(zeros, zt))


def test_vectorized_oracle_matches_scalar():
    sig, _ = sine_sigma()
    x = np.array([0.4, 1.1, 2.6])
    r = np.array([0.9, -1.4, 0.3])
    vec = marcus_map_ode_vec(sig, x, r)
    for i in range(3):
        assert vec[i] == pytest.approx(marcus_map_ode(sig, x[i], r[i]),
                                       abs=1e-10)
