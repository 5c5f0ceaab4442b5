import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from dppballs.errors import GammaOutOfRange, MomentDiverges
from dppballs.harness import empirical_cf, ks_distance
from dppballs.marks import (
    DiscreteWeight,
    ExponentialWeight,
    LogNormalWeight,
    ParetoWeight,
    PointMassWeight,
    RadiusLaw,
    StableLaw,
    WeightLaw,
    one_minus_cos_integral,
    one_minus_cos_integral_quad,
    sample_radius,
    sample_stable,
    sample_weight,
    sigma_gamma,
    stable_tail_constant,
    unit_ball_volume,
)

RADIUS_LAWS = [
    RadiusLaw(1.2),
    RadiusLaw(1.5, r0=0.7),
    RadiusLaw(1.25, "smoothed_pareto"),
    RadiusLaw(1.7, "smoothed_pareto", r0=2.0, kappa=3.0),
    RadiusLaw(2.5, d=2),
]


def _osc_integral(fn):
    """int_0^inf fn with mpmath: tanh-sinh near 0, oscillatory summation beyond."""
    with mp.workdps(30):
        return mp.quad(fn, [0, 1]) + mp.quadosc(fn, [1, mp.inf], period=2 * mp.pi)


def _quad_pos(fn, lo=0.0, knot=1.0):
    a, _ = integrate.quad(fn, lo, knot, epsabs=0, epsrel=1e-13, limit=200)
    b, _ = integrate.quad(fn, knot, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return a + b


# -- radius laws ------------------------------------------------------------


@pytest.mark.parametrize("law", RADIUS_LAWS, ids=str)
def test_radius_density_integrates_to_one(law):
    total = _quad_pos(lambda r: float(law.pdf(r)), law.support_start, max(law.r0, law.support_start) * 2)
    assert total == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("law", RADIUS_LAWS, ids=str)
def test_radius_tail_constants(law):
    r = np.logspace(-3, 4, 2000) * law.r0
    scaled = r ** (law.beta + 1) * law.pdf(r)
    assert np.all(scaled <= law.C_0 * (1 + 1e-12))
    far = r >= 100 * law.r0
    np.testing.assert_allclose(scaled[far], law.C_beta, rtol=1e-6)
    if law.form == "pareto":
        np.testing.assert_allclose(scaled[r >= law.r0], law.C_beta, rtol=1e-13)


@pytest.mark.parametrize("law", RADIUS_LAWS, ids=str)
def test_radius_moments_and_tail(law):
    p = law.d
    oracle = _quad_pos(lambda r: r**p * float(law.pdf(r)), law.support_start, max(law.r0, law.support_start) * 2)
    assert law.mean_power(p) == pytest.approx(oracle, rel=1e-9)
    assert law.mean_volume() == pytest.approx(unit_ball_volume(law.d) * oracle, rel=1e-9)
    for x in (0.5, 1.0, 3.0, 40.0):
        tail = _quad_pos(lambda r: float(law.pdf(r)), x, 2 * x)
        assert float(law.sf(x)) == pytest.approx(tail, rel=1e-9, abs=1e-14)
    with pytest.raises(MomentDiverges):
        law.mean_power(law.beta)


def test_radius_law_validation():
    with pytest.raises(ValueError):
        RadiusLaw(2.0)
    with pytest.raises(ValueError):
        RadiusLaw(1.5, "smoothed_pareto", kappa=1.2)


def test_sample_radius_quantile_boundary():
    law = RadiusLaw(1.2)
    assert float(law.quantile(0.0)) == 1.0
    assert 0.3 * float(law.quantile(0.0)) == pytest.approx(0.3)
    r = sample_radius(law, 0.3, np.random.default_rng(1), 1000)
    assert r.min() >= 0.3


def test_sample_radius_mean_volume():
    law = RadiusLaw(1.5)
    r = sample_radius(law, 1.0, np.random.default_rng(2), 10**6)
    se = r.std(ddof=1) / math.sqrt(r.size)
    assert abs(r.mean() - law.mean_power(1.0)) < 3 * se


def test_sample_radius_scaling_in_law():
    law = RadiusLaw(1.2)
    a = sample_radius(law, 0.1, np.random.default_rng(3), 10**5)
    b = 0.1 * sample_radius(law, 1.0, np.random.default_rng(4), 10**5)
    assert ks_distance(a, b) < 0.01
    same = sample_radius(law, 0.1, np.random.default_rng(3), 10**5)
    np.testing.assert_array_equal(a, same)


def test_smoothed_radius_sampler_matches_cdf():
    law = RadiusLaw(1.25, "smoothed_pareto")
    r = law.sample(np.random.default_rng(5), 20000)
    assert stats.kstest(r, lambda x: law.cdf(x)).pvalue > 0.01


# -- weight laws ------------------------------------------------------------


def test_exponential_weight_mean():
    law = ExponentialWeight(1.0)
    m = sample_weight(law, np.random.default_rng(6), 10**5)
    assert abs(m.mean() - 1.0) < 3 * m.std(ddof=1) / math.sqrt(m.size)


def test_pareto_weight_hill_estimator():
    law = ParetoWeight(1.5)
    m = np.sort(sample_weight(law, np.random.default_rng(7), 10**6))[::-1]
    k = 10**4
    hill = 1.0 / np.mean(np.log(m[:k] / m[k]))
    assert 1.35 <= hill <= 1.65


def test_point_mass_weight_always_one():
    m = sample_weight(PointMassWeight(), np.random.default_rng(8), 1000)
    assert np.all(m == 1.0)
    assert PointMassWeight().moment(1.37) == 1.0


WEIGHTS = [
    ExponentialWeight(1.0),
    ExponentialWeight(2.5),
    ParetoWeight(1.5),
    ParetoWeight(1.2, 0.5),
    LogNormalWeight(0.1, 0.4),
    DiscreteWeight((0.5, 2.0), (0.25, 0.75)),
    PointMassWeight(1.7),
]


def _weight_expect(law, fn):
    """E[fn(M)] with mpmath quadrature on the density."""
    if isinstance(law, PointMassWeight):
        return fn(mp.mpf(law.value))
    if isinstance(law, DiscreteWeight):
        return sum(p * fn(mp.mpf(a)) for a, p in zip(law.atoms, law.probs))
    if isinstance(law, ExponentialWeight):
        dens, lo = (lambda m: mp.exp(-m / law.scale) / law.scale), 0
    else:
        dens, lo = (lambda m: mp.npdf(mp.log(m), law.mu_log, law.sigma_log) / m), 0
    return mp.quad(lambda m: fn(m) * dens(m), [lo, lo + 1, lo + 10, mp.inf])


def _pareto_oracle(law, kind, t):
    """Pareto functionals through mpmath's upper incomplete gamma at negative order.

    With c = t m0: E[1 - e^(-tM)] = 1 - a c^a G(-a, c) and
    E[psi(tM)] = a c^a (G(-a, c) - c^(-a) / a + c^(1-a) / (a - 1)).
    """
    with mp.workdps(40):
        a, c = mp.mpf(law.alpha), mp.mpf(t) * law.m0
        G = mp.gammainc(-a, c)
        if kind == "oml":
            return 1 - a * c**a * G
        return a * c**a * (G - c ** (-a) / a + c ** (1 - a) / (a - 1))


@pytest.mark.parametrize("law", WEIGHTS, ids=str)
def test_weight_moments(law):
    if isinstance(law, ParetoWeight):
        # E[M^p] by scipy quadrature in s = log(m / m0)
        for p in (1.0, 1.1):
            f = lambda s: law.alpha * law.m0**p * math.exp((p - law.alpha) * s)
            assert law.moment(p) == pytest.approx(integrate.quad(f, 0, np.inf, epsrel=1e-13)[0], rel=1e-10)
        return
    assert law.mean == pytest.approx(float(_weight_expect(law, lambda m: m)), rel=1e-10)
    p = 1.1 if law.alpha < 2 else 2.0
    assert law.moment(p) == pytest.approx(float(_weight_expect(law, lambda m: m**p)), rel=1e-10)


@pytest.mark.parametrize("law", WEIGHTS, ids=str)
@pytest.mark.parametrize("t", [1e-6, 0.03, 0.7, 5.0])
def test_weight_laplace_functionals(law, t):
    if isinstance(law, ParetoWeight):
        oml, psi = float(_pareto_oracle(law, "oml", t)), float(_pareto_oracle(law, "psi", t))
    else:
        oml = float(_weight_expect(law, lambda m: -mp.expm1(-t * m)))
        psi = float(_weight_expect(law, lambda m: mp.exp(-t * m) - 1 + t * m))
    assert float(law.one_minus_laplace(t)) == pytest.approx(oml, rel=1e-9)
    assert float(law.psi_mean(t)) == pytest.approx(psi, rel=1e-8)


def test_pareto_attraction_constants():
    law = ParetoWeight(1.5, 2.0)
    m = np.array([3.0, 10.0, 1e4])
    sf = (law.m0 / m) ** law.alpha
    np.testing.assert_allclose(sf * m**law.alpha, law.tail_constant, rtol=1e-14)
    # C_alpha^-1 = int_0^inf x^-alpha sin x dx
    inv = _osc_integral(lambda x: x ** (-law.alpha) * mp.sin(x))
    assert stable_tail_constant(law.alpha) == pytest.approx(1.0 / float(inv), rel=1e-10)
    assert law.sigma ** law.alpha == pytest.approx(law.tail_constant * float(inv), rel=1e-10)


def test_weight_law_round_trip():
    for law in WEIGHTS:
        assert WeightLaw.from_dict(law.to_dict()) == law
    with pytest.raises(ValueError):
        WeightLaw.from_dict({"form": "cauchy"})


# -- stable laws ------------------------------------------------------------


def test_stable_gaussian_case():
    law = StableLaw(2.0, 0.8)
    x = sample_stable(law, np.random.default_rng(9), 10**6)
    assert x.var() == pytest.approx(2 * 0.8**2, rel=0.05)
    y = sample_stable(law, np.random.default_rng(10), 10**4)
    ad = stats.anderson(y, "norm")
    assert ad.statistic < ad.critical_values[list(ad.significance_level).index(1.0)]


def test_stable_cf_matches_closed_form():
    law = StableLaw(1.5, 0.7, 1.0, 0.0)
    x = sample_stable(law, np.random.default_rng(11), 10**5)
    t = np.array([0.5, 1.0, 2.0])
    ecf = empirical_cf(x, t)
    a, s, b = law.index, law.scale, law.skewness
    exact = np.exp(-(s**a) * np.abs(t) ** a * (1 - 1j * b * np.sign(t) * math.tan(math.pi * a / 2)))
    np.testing.assert_allclose(law.cf(t), exact, rtol=1e-14)
    assert np.all(np.abs(ecf.values.real - exact.real) < 3 * ecf.se_real)
    assert np.all(np.abs(ecf.values.imag - exact.imag) < 3 * ecf.se_imag)


def test_stable_shift_is_location():
    base = StableLaw(1.5, 1.0, 1.0, 0.0)
    moved = StableLaw(1.5, 1.0, 1.0, 2.5)
    a = sample_stable(moved, np.random.default_rng(12), 10**5) - 2.5
    b = sample_stable(base, np.random.default_rng(13), 10**5)
    assert ks_distance(a, b) < 0.01


def test_stable_log_laplace_skew_one():
    # E exp(-theta X) = exp(-s^a theta^a / cos(pi a / 2)) for skewness 1
    law = StableLaw(1.5, 0.6, 1.0)
    for th in (0.5, 1.0, 2.0):
        assert law.log_laplace(th) == pytest.approx(-(0.6**1.5) * th**1.5 / math.cos(0.75 * math.pi), rel=1e-14)


# -- constants --------------------------------------------------------------


@pytest.mark.parametrize("d,v", [(1, 2.0), (2, math.pi), (3, 4 * math.pi / 3)])
def test_unit_ball_volume(d, v):
    assert unit_ball_volume(d) == pytest.approx(v, rel=1e-15)


@pytest.mark.parametrize("gamma", [1.2, 1.5, 1.8])
def test_one_minus_cos_integral_routes(gamma):
    quad = one_minus_cos_integral_quad(gamma)
    closed = one_minus_cos_integral(gamma)
    assert abs(quad - closed) / closed < 1e-8
    # head on [0, 1] from the cosine series integrated term by term; the
    # non-oscillating part of the tail is int_1^inf r^(-1-gamma) dr = 1 / gamma
    with mp.workdps(30):
        head = mp.nsum(lambda k: (-1) ** (k + 1) / (mp.factorial(2 * k) * (2 * k - gamma)), [1, mp.inf])
        tail = mp.quadosc(lambda r: mp.cos(r) / r ** (1 + gamma), [1, mp.inf], period=2 * mp.pi)
        oracle = head + 1 / mp.mpf(gamma) - tail
    assert closed == pytest.approx(float(oracle), rel=1e-10)


def test_sigma_gamma_homogeneity():
    law = RadiusLaw(1.25)
    sg = sigma_gamma(law, PointMassWeight(), 1.25, 1)
    assert sg.weight_moment == 1.0
    assert sg.cross_check_gap < 1e-8
    doubled = RadiusLaw(1.25, r0=2.0 ** (1 / 1.25))
    assert doubled.C_beta == pytest.approx(2 * law.C_beta, rel=1e-14)
    sg2 = sigma_gamma(doubled, PointMassWeight(), 1.25, 1)
    assert sg2.value == pytest.approx(sg.value * 2 ** (1 / 1.25), rel=1e-12)
    bigger = sigma_gamma(law, ExponentialWeight(2.0), 1.25, 1)
    assert bigger.value > sg.value


def test_sigma_gamma_errors():
    law = RadiusLaw(1.25)
    with pytest.raises(GammaOutOfRange):
        sigma_gamma(law, PointMassWeight(), 2.0, 1)
    with pytest.raises(MomentDiverges):
        sigma_gamma(law, ParetoWeight(1.2), 1.25, 1)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.05, 1.95))
def test_cos_integral_cross_check_property(gamma):
    closed = one_minus_cos_integral(gamma)
    assert abs(one_minus_cos_integral_quad(gamma) - closed) / closed < 1e-8
