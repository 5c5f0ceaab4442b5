import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from dppballs.dpp_engine import MarkedConfiguration
from dppballs.errors import CertificateFailed, RegimeParameterMismatch
from dppballs.fields import (
    BoxMeasure,
    Dilated,
    GaussianBump,
    IntervalMeasure,
    SignedCombination,
    ball_mass,
    ball_power_integral,
    field_expectation,
    field_samples,
    field_samples_to_csv,
    field_value,
    fubini_expectation,
    measure_from_dict,
    normalization,
    verify_mab,
)
from dppballs.kernelspace import ScaledKernelSpec, StationaryKernel, WindowSpec
from dppballs.marks import ExponentialWeight, PointMassWeight, RadiusLaw

UNIT = IntervalMeasure(0.5, 0.5)  # indicator of [0, 1]


# -- ball masses ------------------------------------------------------------


def test_interval_ball_mass_examples():
    assert ball_mass(UNIT, 0.0, 0.5) == pytest.approx(0.5)
    assert ball_mass(UNIT, 0.5, 0.5) == pytest.approx(1.0)
    assert ball_mass(UNIT, 3.0, 1.0) == 0.0
    assert ball_mass(UNIT, 0.5, 10.0) == pytest.approx(1.0)
    r = np.logspace(-8, 1, 50)
    m = UNIT.ball_mass(np.full(50, 0.3), r)
    assert np.all(np.diff(m) >= 0)
    assert m[0] < 1e-7


@pytest.mark.parametrize("x,r", [(0.0, 0.3), (0.7, 1.5), (3.0, 1.0), (-2.0, 0.01), (0.1, 1e-5), (8.0, 4.0)])
def test_gaussian_bump_ball_mass_1d_against_mpmath(x, r):
    mu = GaussianBump((0.2,), 0.8, 1.5)
    with mp.workdps(30):
        oracle = mp.quad(lambda y: 1.5 * mp.exp(-((y - 0.2) / 0.8) ** 2), [x - r, x + r])
    assert ball_mass(mu, x, r) == pytest.approx(float(oracle), rel=1e-10, abs=1e-300)


def _disk_oracle(density, cx, cy, r):
    def inner(x):
        h = math.sqrt(max(r * r - (x - cx) ** 2, 0.0))
        return integrate.quad(lambda y: density(x, y), cy - h, cy + h, epsabs=1e-13, epsrel=1e-12)[0]

    return integrate.quad(inner, cx - r, cx + r, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


@pytest.mark.parametrize("c,r", [((0.0, 0.0), 0.5), ((1.0, -0.5), 2.0), ((3.0, 1.0), 1.2)])
def test_gaussian_bump_ball_mass_2d(c, r):
    mu = GaussianBump((0.1, -0.2), 0.7, 2.0)
    dens = lambda x, y: 2.0 * math.exp(-((x - 0.1) ** 2 + (y + 0.2) ** 2) / 0.49)
    coarse = mu.ball_mass(np.array([c]), r)[0]
    fine = mu.ball_mass(np.array([c]), r, nodes=80)[0]
    assert abs(coarse - fine) <= 1e-6 * max(abs(fine), 1e-12)
    assert fine == pytest.approx(_disk_oracle(dens, *c, r), rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("c,r", [((0.5, 0.5), 0.3), ((0.0, 0.0), 0.7), ((1.2, 0.5), 0.5), ((0.5, 0.5), 3.0),
                                 ((-0.5, 1.5), 1.0), ((3.0, 3.0), 1.0)])
def test_box_ball_mass_against_quadrature(c, r):
    mu = BoxMeasure((0.0, 0.0), (1.0, 1.0), 2.0)
    lo, hi = max(0.0, c[0] - r), min(1.0, c[0] + r)
    if lo >= hi:
        oracle = 0.0
    else:
        def chord(x):
            h = math.sqrt(max(r * r - (x - c[0]) ** 2, 0.0))
            return max(0.0, min(1.0, c[1] + h) - max(0.0, c[1] - h))

        pts = [p for p in (c[0] - r, c[0] + r, c[0]) if lo < p < hi]
        oracle = 2.0 * integrate.quad(chord, lo, hi, points=pts or None, epsabs=1e-13, limit=200)[0]
    assert mu.ball_mass(np.array([c]), r)[0] == pytest.approx(oracle, rel=1e-9, abs=1e-12)


def test_combination_and_dilation():
    a, b = IntervalMeasure(0.0, 1.0), IntervalMeasure(0.5, 0.25, 3.0)
    mu = SignedCombination(((2.0, a), (-1.0, b)))
    x, r = np.array([0.1, 0.6, -0.8]), np.array([0.2, 0.5, 1.0])
    np.testing.assert_allclose(mu.ball_mass(x, r), 2 * a.ball_mass(x, r) - b.ball_mass(x, r))
    assert mu.total_mass == pytest.approx(2 * 2.0 - 1.5)
    assert not mu.is_nonnegative
    dil = Dilated(UNIT, 3.0)  # indicator of [0, 3] with density 1/3
    assert dil.ball_mass(1.5, 1.5)[0] == pytest.approx(1.0)
    assert dil.ball_mass(0.0, 1.5)[0] == pytest.approx(0.5)
    assert measure_from_dict(mu.to_dict()).ball_mass(x, r) == pytest.approx(mu.ball_mass(x, r))
    assert measure_from_dict(dil.to_dict()).ball_mass(1.0, 0.5) == pytest.approx(dil.ball_mass(1.0, 0.5))
    with pytest.raises(ValueError):
        measure_from_dict({"form": "sphere"})


# -- field values -----------------------------------------------------------


def _config(x, r, m):
    return MarkedConfiguration(np.asarray(x, float).reshape(-1, 1), np.asarray(r, float), np.asarray(m, float), 0.5)


def test_field_value_examples():
    assert field_value(_config([], [], []), UNIT) == 0.0
    assert field_value(_config([0.0], [0.5], [2.0]), UNIT) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(0.01, 5), st.floats(0.1, 10)), min_size=1, max_size=8),
       st.integers(1, 7), st.floats(-3, 3))
def test_field_value_additive_and_linear(atoms, split, c):
    x, r, m = map(np.array, zip(*atoms))
    k = split % len(atoms)
    whole = field_value(_config(x, r, m), UNIT)
    parts = field_value(_config(x[:k], r[:k], m[:k]), UNIT) + field_value(_config(x[k:], r[k:], m[k:]), UNIT)
    assert whole == pytest.approx(parts, rel=1e-12, abs=1e-12)
    other = IntervalMeasure(1.0, 2.0, 0.5)
    combo = SignedCombination(((c, UNIT), (1.0, other)))
    cfg = _config(x, r, m)
    assert field_value(cfg, combo) == pytest.approx(c * whole + field_value(cfg, other), rel=1e-10, abs=1e-10)


def test_field_samples_csv(tmp_path):
    s = field_samples([1.0, 3.0], 2.0, 0.5, 0.25)
    assert [x.normalized for x in s] == [-2.0, 2.0]
    p = tmp_path / "f.csv"
    field_samples_to_csv(s, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "rho,replicate_id,value,centered,normalized"
    assert lines[2] == "0.25,1,3.0,1.0,2.0"
    with pytest.raises(ValueError):
        field_samples([1.0], 0.0, 0.0, 0.5)


# -- expectations -----------------------------------------------------------


def _windowed_oracle(L, rho, beta, r0=1.0):
    """int_{-L}^{L} E[|[x - rho R, x + rho R] cap [0, 1]|] dx for Pareto R >= r0.

    The overlap length is int_0^1 1{|y - x| < rho R} dy, so the double
    integral is int_0^1 G(L - y) + G(L + y) dy with G(a) = int_0^a P(rho R > t) dt.
    """
    def G(a):
        s = a / rho
        if s <= r0:
            return a
        return rho * (r0 + r0**beta * (r0 ** (1 - beta) - s ** (1 - beta)) / (beta - 1))

    return integrate.quad(lambda y: G(L - y) + G(L + y), 0.0, 1.0, epsabs=0, epsrel=1e-13)[0]


@pytest.mark.parametrize("rho", [1.0, 0.5, 0.2])
def test_field_expectation_against_windowed_oracle(rho):
    beta, K0 = 1.5, 0.3
    scaled = ScaledKernelSpec(StationaryKernel(1, K0), eta=1.2)
    window = WindowSpec.interval(-6.0, 6.0, 48)
    weight = ExponentialWeight(2.0)
    val = field_expectation(scaled, window, RadiusLaw(beta), weight, IntervalMeasure(0.5, 0.5), rho)
    oracle = scaled.lam(rho) * K0 * 2.0 * _windowed_oracle(6.0, rho, beta)
    assert val == pytest.approx(oracle, rel=2e-5)


def test_fubini_is_the_infinite_window_limit():
    beta, rho = 1.5, 0.5
    radius = RadiusLaw(beta)
    # integrating G(L -+ y) to infinity leaves 2 rho E[R] per unit of mass
    assert fubini_expectation(0.7, PointMassWeight(), radius, UNIT, rho) == pytest.approx(
        0.7 * 2 * rho * radius.mean_power(1))
    huge = _windowed_oracle(1e8, rho, beta)
    assert 0.7 * huge == pytest.approx(fubini_expectation(0.7, PointMassWeight(), radius, UNIT, rho), rel=1e-3)


def test_field_expectation_factorizes_weight():
    scaled = ScaledKernelSpec(StationaryKernel(1, 0.3), eta=1.2)
    window = WindowSpec.interval(-4.0, 4.0, 32)
    args = (scaled, window, RadiusLaw(1.5))
    one = field_expectation(*args, PointMassWeight(), UNIT, 0.5)
    three = field_expectation(*args, ExponentialWeight(3.0), UNIT, 0.5)
    assert three == pytest.approx(3.0 * one, rel=1e-12)


# -- normalization ----------------------------------------------------------


def test_normalization_examples():
    assert normalization("intermediate", 4.0, 0.5, 2.0, 1.5, 1).n == 1.0
    assert normalization("large", 16.0, 1.0, 2.0, 1.5, 1).n == pytest.approx(4.0)
    small = normalization("small", 1 / 32, 1.0, 2.0, 1.25, 1)
    assert small.gamma == pytest.approx(1.25)
    assert small.n == pytest.approx(1 / 16)


@pytest.mark.parametrize("args", [
    ("large", 1.0, 0.5, 2.0, 2.5, 1),
    ("small", 1.0, 0.5, 1.2, 1.5, 1),
    ("medium", 1.0, 0.5, 2.0, 1.5, 1),
])
def test_normalization_mismatch(args):
    with pytest.raises(RegimeParameterMismatch):
        normalization(*args)


# -- M_{alpha, beta} certificates -------------------------------------------


def _unit_interval_I2(r):
    # int |len([x - r, x + r] cap [0, 1])|^2 dx: plateau plus two linear ramps
    return 4 * r**2 - 8 * r**3 / 3 if r <= 0.5 else 2 * r - 1 / 3


@pytest.mark.parametrize("r", [1e-3, 0.1, 0.5, 0.9, 4.0, 100.0])
def test_ball_power_integral_closed_form(r):
    assert ball_power_integral(UNIT, 2.0, r) == pytest.approx(_unit_interval_I2(r), rel=1e-10)


def test_verify_mab_constant_and_scaling():
    grid = np.logspace(-3, 3, 61)
    cert = verify_mab(UNIT, 2.0, 1.5, 1.0, 2.0, grid)
    oracle = max(_unit_interval_I2(r) / min(r, r**2) for r in grid)
    assert cert.C_mu == pytest.approx(oracle, rel=1e-9)
    doubled = verify_mab(UNIT.scaled(2.0), 2.0, 1.5, 1.0, 2.0, grid)
    assert doubled.C_mu == pytest.approx(4.0 * cert.C_mu, rel=1e-10)
    assert cert.holds_at(0.3, _unit_interval_I2(0.3))


@pytest.mark.parametrize("p,q", [(0.5, 2.0), (1.0, 2.5)])
def test_verify_mab_fails_for_wrong_exponents(p, q):
    with pytest.raises(CertificateFailed):
        verify_mab(UNIT, 2.0, 1.5, p, q)


def test_verify_mab_rejects_bad_order():
    with pytest.raises(ValueError):
        verify_mab(UNIT, 2.0, 1.5, 1.6, 2.0)
