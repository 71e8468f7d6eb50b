import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from shen import GridSpec, SpectralMeasure, dalang_integral, grid_weights, h_norm_sq
from shen.spectral import radial_density

AREA = {1: 2.0, 2: 2 * math.pi}


def covariance(m, r):
    if m.family.value == "riesz":
        return r ** -m.param
    return np.exp(-r / m.param)


def gaussian_pairing_physical(m, s):
    """int Lambda(z) (f * f)(z) dz for f = exp(-|x|^2 / 2 s^2), in physical space."""
    d = m.dim
    conv = lambda r: (math.pi * s * s) ** (d / 2) * math.exp(-r * r / (4 * s * s))
    # r = v^2 tames the |z|^-eta singularity
    f = lambda v: AREA[d] * (v * v) ** (d - 1) * covariance(m, v * v) * conv(v * v) * 2 * v
    return integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-11, limit=200)[0]


def gaussian_pairing_spectral(m, s):
    d = m.dim
    f = lambda v: AREA[d] * (v * v) ** (d - 1) * radial_density(m, v * v) * (2 * math.pi * s * s) ** d * math.exp(-(s * v * v) ** 2) * 2 * v
    return integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-11, limit=200)[0]


@pytest.mark.parametrize("m", [
    SpectralMeasure.riesz(0.5, 1),
    SpectralMeasure.riesz(0.8, 1),
    SpectralMeasure.riesz(1.0, 2),
    SpectralMeasure.riesz(1.5, 2),
    SpectralMeasure.exponential(1.0, 1),
    SpectralMeasure.exponential(0.3, 1),
    SpectralMeasure.exponential(2.0, 2),
])
@pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
def test_density_constant_matches_covariance(m, s):
    # Parseval for a Gaussian test function pins the normalization of g
    assert gaussian_pairing_spectral(m, s) == pytest.approx(gaussian_pairing_physical(m, s), rel=1e-8)


def test_white_density_constant():
    assert SpectralMeasure.white(1).constant == pytest.approx(1 / (2 * math.pi))
    assert SpectralMeasure.white(2).constant == pytest.approx(1 / (2 * math.pi) ** 2)


@pytest.mark.parametrize("bad", [
    dict(family="riesz", dim=1, param=1.0),
    dict(family="riesz", dim=2, param=0.0),
    dict(family="bessel", dim=1, param=-1.0),
    dict(family="exponential", dim=1, param=0.0),
    dict(family="riesz", dim=1, param=None),
    dict(family="white", dim=4),
])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(ValueError):
        SpectralMeasure(**bad)


@given(st.sampled_from([
    SpectralMeasure.white(1), SpectralMeasure.riesz(0.5, 1), SpectralMeasure.riesz(1.2, 2),
    SpectralMeasure.bessel(1.5, 2), SpectralMeasure.exponential(0.7, 1),
]))
def test_measure_dict_round_trip(m):
    assert SpectralMeasure.from_dict(m.to_dict()) == m


@pytest.mark.parametrize("m, verdict", [
    (SpectralMeasure.white(1), "converges"),
    (SpectralMeasure.white(2), "diverges"),
    (SpectralMeasure.riesz(0.5, 1), "converges"),
    (SpectralMeasure.riesz(1.9, 2), "converges"),
    (SpectralMeasure.bessel(0.4, 3), "diverges"),
    (SpectralMeasure.bessel(1.0, 2), "converges"),
    (SpectralMeasure.exponential(1.0, 2), "converges"),
])
def test_dalang_verdict(m, verdict):
    assert dalang_integral(m).verdict == verdict


def test_dalang_white_d1_value():
    # int (2 pi)^-1 / (1 + x^2) dx over R = 1/2
    res = dalang_integral(SpectralMeasure.white(1), cutoffs=(1e2, 1e4, 1e6, 1e8))
    assert res.value == pytest.approx(0.5, rel=1e-6)


def test_riesz_zero_mode_gets_cell_mass():
    m, g = SpectralMeasure.riesz(0.5, 1), GridSpec(64, 10.0, 1)
    a = math.pi / g.L
    expected = integrate.quad(lambda x: m.constant * abs(x) ** -0.5, -a, a, points=[0])[0]
    assert grid_weights(m, g)[0] == pytest.approx(expected, rel=1e-8)


def test_grid_weights_are_read_only():
    w = grid_weights(SpectralMeasure.white(1), GridSpec(16, 4.0, 1))
    with pytest.raises(ValueError):
        w[0] = 1.0


@given(st.sampled_from([GridSpec(16, 4.0, 1), GridSpec(32, 7.0, 1), GridSpec(8, 3.0, 2)]), st.integers(0, 2**31))
def test_white_h_norm_is_l2(g, seed):
    f = np.random.default_rng(seed).standard_normal(g.shape)
    assert h_norm_sq(f, SpectralMeasure.white(g.dim), g) == pytest.approx(g.integrate(f * f), rel=1e-10)


@given(st.integers(0, 2**31), st.floats(0.1, 3.0))
def test_h_norm_homogeneous_and_nonnegative(seed, c):
    g, m = GridSpec(32, 8.0, 1), SpectralMeasure.riesz(0.5, 1)
    f = np.random.default_rng(seed).standard_normal(g.shape)
    n1 = h_norm_sq(f, m, g)
    assert n1 >= 0
    assert h_norm_sq(c * f, m, g) == pytest.approx(c * c * n1, rel=1e-10)
