"""Radius and weight mark laws, stable laws, and the universal constants.

Stable laws use the S_alpha(sigma, beta, mu) parameterization of
Samorodnitsky & Taqqu, with characteristic function

    exp(-sigma^a |t|^a (1 - i beta sign(t) tan(pi a / 2)) + i mu t),  a != 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import GammaOutOfRange, MomentDiverges


def unit_ball_volume(d: int) -> float:
    """Lebesgue measure of the unit ball of R^d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def psi(u):
    """psi(u) = exp(-u) - 1 + u, with a Taylor branch near zero."""
    u = np.asarray(u, float)
    out = np.empty_like(u)
    small = np.abs(u) < 1e-4
    us = u[small]
    out[small] = us * us * (0.5 - us / 6.0 + us * us / 24.0 - us**3 / 120.0)
    ub = u[~small]
    out[~small] = np.expm1(-ub) + ub
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# radius laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadiusLaw:
    """Heavy-tailed radius law with r^(beta+1) f(r) -> C_beta.

    ``pareto``: f(r) = beta r0^beta r^(-beta-1) on r >= r0.
    ``smoothed_pareto``: f(r) = C_beta r^(-beta-1) (1 - exp(-(r/r0)^kappa)),
    positive on (0, inf) and equal to the Pareto tail up to a factor
    1 - exp(-(r/r0)^kappa).
    """

    beta: float
    form: str = "pareto"
    r0: float = 1.0
    kappa: float = 4.0
    d: int = 1

    def __post_init__(self):
        if not (self.d < self.beta < 2 * self.d):
            raise ValueError(f"need d < beta < 2d, got beta={self.beta}, d={self.d}")
        if self.form not in ("pareto", "smoothed_pareto"):
            raise ValueError(f"unknown radius form {self.form!r}")
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")
        if self.form == "smoothed_pareto" and self.kappa <= self.beta:
            raise ValueError("smoothing exponent kappa must exceed beta")

    @property
    def C_beta(self) -> float:
        if self.form == "pareto":
            return self.beta * self.r0**self.beta
        return self.beta * self.r0**self.beta / math.gamma(1.0 - self.beta / self.kappa)

    @property
    def C_0(self) -> float:
        return self.C_beta

    @property
    def support_start(self) -> float:
        return self.r0 if self.form == "pareto" else 0.0

    def pdf(self, r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.form == "pareto":
                return np.where(r >= self.r0, self.C_beta * r ** (-self.beta - 1.0), 0.0)
            rp = np.where(r > 0, r, 1.0)
            v = self.C_beta * rp ** (-self.beta - 1.0) * -np.expm1(-((rp / self.r0) ** self.kappa))
            return np.where(r > 0, v, 0.0)

    def sf(self, r):
        r = np.asarray(r, float)
        if self.form == "pareto":
            return np.where(r > self.r0, (self.r0 / np.maximum(r, self.r0)) ** self.beta, 1.0)
        s = self.beta / self.kappa
        z = (np.maximum(r, 1e-300) / self.r0) ** self.kappa
        val = (self.C_beta * self.r0 ** (-self.beta) / self.beta) * (
            z ** (-s) * -np.expm1(-z) + special.gammaincc(1.0 - s, z) * math.gamma(1.0 - s)
        )
        return np.where(r > 0, val, 1.0)

    def cdf(self, r):
        return 1.0 - self.sf(r)

    def mean_power(self, p: float) -> float:
        """E[R^p] for 0 <= p < beta."""
        if p >= self.beta:
            raise MomentDiverges(f"E[R^{p}] is infinite for beta={self.beta}")
        if self.form == "pareto":
            return self.beta * self.r0**p / (self.beta - p)
        s = (self.beta - p) / self.kappa
        return self.C_beta * self.r0 ** (p - self.beta) / self.kappa * math.gamma(1.0 - s) / s

    def mean_volume(self) -> float:
        return unit_ball_volume(self.d) * self.mean_power(self.d)

    def quantile(self, u):
        """Inverse CDF (pareto form only)."""
        if self.form != "pareto":
            raise NotImplementedError("quantile is closed-form for the pareto form only")
        u = np.asarray(u, float)
        return self.r0 * (1.0 - u) ** (-1.0 / self.beta)

    def sample(self, rng: np.random.Generator, size=None, rho: float = 1.0):
        """Draws of rho * R with R ~ F."""
        n = 1 if size is None else int(np.prod(size))
        if self.form == "pareto":
            out = self.quantile(rng.random(n))
        else:
            out = self._sample_smoothed(rng, n)
        out = rho * out
        return float(out[0]) if size is None else out.reshape(size)

    def _sample_smoothed(self, rng, n):
        # envelope q(r) = C r^(-beta-1) min((r/r0)^kappa, 1) dominates f
        b, k, r0 = self.beta, self.kappa, self.r0
        m_lo, m_hi = 1.0 / (k - b), 1.0 / b
        p_lo = m_lo / (m_lo + m_hi)
        out = np.empty(0)
        while out.size < n:
            m = max(16, int(1.3 * (n - out.size)))
            u, v, acc = rng.random(m), rng.random(m), rng.random(m)
            lo = v < p_lo
            r = np.where(lo, r0 * u ** (1.0 / (k - b)), r0 * (1.0 - u) ** (-1.0 / b))
            x = (r / r0) ** k
            ratio = -np.expm1(-x) / np.minimum(x, 1.0)
            out = np.concatenate([out, r[acc < ratio]])
        return out[:n]


# ---------------------------------------------------------------------------
# stable laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StableLaw:
    index: float
    scale: float
    skewness: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        if not (0 < self.index <= 2):
            raise ValueError("stable index must lie in (0, 2]")
        if not (-1 <= self.skewness <= 1):
            raise ValueError("skewness must lie in [-1, 1]")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def cf(self, t):
        t = np.asarray(t, float)
        a, s, b = self.index, self.scale, self.skewness
        if a == 1.0:
            w = 1.0 + 1j * b * (2 / np.pi) * np.sign(t) * np.log(np.where(t == 0, 1.0, np.abs(t)))
        else:
            w = 1.0 - 1j * b * np.sign(t) * np.tan(np.pi * a / 2)
        return np.exp(-(s**a) * np.abs(t) ** a * w + 1j * self.shift * t)

    def log_laplace(self, theta):
        """log E[exp(-theta X)] for theta >= 0; finite for index 2 or skewness 1."""
        theta = np.asarray(theta, float)
        a, s = self.index, self.scale
        if a == 2.0:
            return s**2 * theta**2 - self.shift * theta
        if self.skewness != 1.0 or a == 1.0:
            raise ValueError("Laplace transform exists only for skewness 1 (index != 1) or index 2")
        return -(s**a) * theta**a / np.cos(np.pi * a / 2) - self.shift * theta

    def sample(self, rng: np.random.Generator, size=None):
        return sample_stable(self, rng, size)


def sample_stable(law: StableLaw, rng: np.random.Generator, size=None):
    """Chambers-Mallows-Stuck draws from S_index(scale, skewness, shift)."""
    n = 1 if size is None else int(np.prod(size))
    a, b = law.index, law.skewness
    V = rng.uniform(-np.pi / 2, np.pi / 2, n)
    W = rng.standard_exponential(n)
    if a == 2.0:
        X = 2.0 * np.sqrt(W) * np.sin(V)
    elif a == 1.0:
        bv = np.pi / 2 + b * V
        X = (2 / np.pi) * (bv * np.tan(V) - b * np.log((np.pi / 2) * W * np.cos(V) / bv))
    else:
        t = b * np.tan(np.pi * a / 2)
        B = np.arctan(t) / a
        S = (1.0 + t * t) ** (1.0 / (2.0 * a))
        X = (
            S
            * np.sin(a * (V + B))
            / np.cos(V) ** (1.0 / a)
            * (np.cos(V - a * (V + B)) / W) ** ((1.0 - a) / a)
        )
    if a == 1.0:
        out = law.scale * X + (2 / np.pi) * b * law.scale * np.log(law.scale) + law.shift
    else:
        out = law.scale * X + law.shift
    return float(out[0]) if size is None else out.reshape(size)


def stable_tail_constant(alpha: float) -> float:
    """C_alpha = (int_0^inf x^-alpha sin x dx)^-1."""
    if alpha == 1.0:
        return 2.0 / math.pi
    return (1.0 - alpha) / (math.gamma(2.0 - alpha) * math.cos(math.pi * alpha / 2))


# ---------------------------------------------------------------------------
# weight laws
# ---------------------------------------------------------------------------


class WeightLaw:
    """Law G of the ball weights.

    Subclasses expose the attraction parameters (alpha, sigma, skewness,
    shift) of the stable law whose normal domain of attraction contains G,
    and the Laplace functionals used by the exact transforms:

        one_minus_laplace(t) = E[1 - exp(-t m)]
        psi_mean(t)          = E[psi(t m)]
    """

    form: str
    alpha: float
    skewness: float = 0.0
    shift: float = 0.0

    @property
    def sigma(self) -> float:
        raise NotImplementedError

    @property
    def limit_sigma(self) -> float:
        """Scale entering the large-balls control measure.

        For alpha < 2 this is the attraction scale. For alpha = 2 the
        Poisson count fluctuation adds the squared mean, giving
        sigma^2 = E[m^2] / 2.
        """
        if self.alpha == 2.0:
            return math.sqrt(self.moment(2.0) / 2.0)
        return self.sigma

    @property
    def mean(self) -> float:
        return self.moment(1.0)

    def moment(self, p: float) -> float:
        raise NotImplementedError

    def laplace(self, t):
        return 1.0 - self.one_minus_laplace(t)

    def one_minus_laplace(self, t):
        raise NotImplementedError

    def psi_mean(self, t):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(cfg: dict) -> "WeightLaw":
        cfg = dict(cfg)
        form = cfg.pop("form")
        cls = {
            "point_mass": PointMassWeight,
            "exponential": ExponentialWeight,
            "pareto_positive": ParetoWeight,
            "lognormal": LogNormalWeight,
            "discrete": DiscreteWeight,
        }.get(form)
        if cls is None:
            raise ValueError(f"unknown weight form {form!r}")
        return cls(**cfg)


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


@dataclass(frozen=True)
class PointMassWeight(WeightLaw):
    value: float = 1.0
    form = "point_mass"
    alpha = 2.0

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("point mass must be positive")

    @property
    def sigma(self) -> float:
        return 0.0

    def moment(self, p):
        return self.value**p

    def one_minus_laplace(self, t):
        t = np.asarray(t, float)
        return _scalar_or_array(-np.expm1(-t * self.value), t)

    def psi_mean(self, t):
        return psi(np.asarray(t, float) * self.value)

    def sample(self, rng, size=None):
        return self.value if size is None else np.full(size, self.value)

    def to_dict(self):
        return {"form": self.form, "value": self.value}


@dataclass(frozen=True)
class ExponentialWeight(WeightLaw):
    scale: float = 1.0  # the mean
    form = "exponential"
    alpha = 2.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("exponential scale must be positive")

    @property
    def sigma(self) -> float:
        return self.scale / math.sqrt(2.0)

    def moment(self, p):
        return self.scale**p * math.gamma(1.0 + p)

    def one_minus_laplace(self, t):
        st = self.scale * np.asarray(t, float)
        return _scalar_or_array(st / (1.0 + st), st)

    def psi_mean(self, t):
        st = self.scale * np.asarray(t, float)
        return _scalar_or_array(st * st / (1.0 + st), st)

    def sample(self, rng, size=None):
        return rng.exponential(self.scale, size)

    def to_dict(self):
        return {"form": self.form, "scale": self.scale}


def _upper_gamma_neg(s: float, t):
    """Gamma(-s, t) for 1 < s < 2 and t > 0, by two downward recurrences."""
    a2 = 2.0 - s  # in (0, 1)
    g2 = special.gammaincc(a2, t) * math.gamma(a2)  # Gamma(2-s, t)
    g1 = (g2 - t ** (1.0 - s) * np.exp(-t)) / (1.0 - s)  # Gamma(1-s, t)
    return (g1 - t ** (-s) * np.exp(-t)) / (-s)


@dataclass(frozen=True)
class ParetoWeight(WeightLaw):
    """P(M > m) = (m0 / m)^alpha on m >= m0, totally skewed to the right."""

    alpha: float = 1.5
    m0: float = 1.0
    form = "pareto_positive"
    skewness = 1.0

    def __post_init__(self):
        if not (1.0 < self.alpha < 2.0):
            raise ValueError("pareto weights need alpha in (1, 2)")
        if self.m0 <= 0:
            raise ValueError("m0 must be positive")

    @property
    def tail_constant(self) -> float:
        return self.m0**self.alpha

    @property
    def sigma(self) -> float:
        return (self.tail_constant / stable_tail_constant(self.alpha)) ** (1.0 / self.alpha)

    def moment(self, p):
        if p >= self.alpha:
            raise MomentDiverges(f"E[M^{p}] is infinite for alpha={self.alpha}")
        return self.alpha * self.m0**p / (self.alpha - p)

    def _series(self, x, start):
        # alpha * sum_{k>=start} (-x)^k / (k! (k - alpha)), x <= 1
        a = self.alpha
        total = np.zeros_like(x)
        term = np.ones_like(x)
        for k in range(1, 40):
            term = term * (-x) / k
            if k >= start:
                total = total + term / (k - a)
        return a * total

    def _psi_unit(self, x):
        """E[psi(x M)] for M ~ Pareto(alpha, 1)."""
        a = self.alpha
        x = np.asarray(x, float)
        out = np.zeros_like(x)
        small = (x > 0) & (x <= 1.0)
        xs = x[small]
        out[small] = a * math.gamma(-a) * xs**a - self._series(xs, 2)
        big = x > 1.0
        xb = x[big]
        lap = a * xb**a * _upper_gamma_neg(a, xb)
        out[big] = lap - 1.0 + xb * a / (a - 1.0)
        return out

    def _oml_unit(self, x):
        """E[1 - exp(-x M)] for M ~ Pareto(alpha, 1)."""
        a = self.alpha
        x = np.asarray(x, float)
        out = np.zeros_like(x)
        small = (x > 0) & (x <= 1.0)
        xs = x[small]
        out[small] = -a * math.gamma(-a) * xs**a + self._series(xs, 1)
        big = x > 1.0
        xb = x[big]
        out[big] = 1.0 - a * xb**a * _upper_gamma_neg(a, xb)
        return out

    def one_minus_laplace(self, t):
        t = np.asarray(t, float)
        return _scalar_or_array(self._oml_unit(t * self.m0), t)

    def psi_mean(self, t):
        t = np.asarray(t, float)
        return _scalar_or_array(self._psi_unit(t * self.m0), t)

    def sample(self, rng, size=None):
        u = rng.random(size)
        return self.m0 * (1.0 - u) ** (-1.0 / self.alpha)

    def to_dict(self):
        return {"form": self.form, "alpha": self.alpha, "m0": self.m0}


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(80)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


@dataclass(frozen=True)
class LogNormalWeight(WeightLaw):
    mu_log: float = 0.0
    sigma_log: float = 0.5
    form = "lognormal"
    alpha = 2.0

    def __post_init__(self):
        if self.sigma_log <= 0:
            raise ValueError("sigma_log must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance / 2.0)

    @property
    def variance(self) -> float:
        s2 = self.sigma_log**2
        return (math.exp(s2) - 1.0) * math.exp(2 * self.mu_log + s2)

    def moment(self, p):
        return math.exp(p * self.mu_log + 0.5 * (p * self.sigma_log) ** 2)

    def _expect(self, fn, t):
        t = np.asarray(t, float)
        m = np.exp(self.mu_log + self.sigma_log * _GH_NODES)
        vals = fn(t[..., None] * m) @ _GH_WEIGHTS
        return _scalar_or_array(vals, t)

    def one_minus_laplace(self, t):
        return self._expect(lambda u: -np.expm1(-u), t)

    def psi_mean(self, t):
        return self._expect(psi, t)

    def sample(self, rng, size=None):
        return rng.lognormal(self.mu_log, self.sigma_log, size)

    def to_dict(self):
        return {"form": self.form, "mu_log": self.mu_log, "sigma_log": self.sigma_log}


@dataclass(frozen=True)
class DiscreteWeight(WeightLaw):
    atoms: tuple = (1.0,)
    probs: tuple = (1.0,)
    form = "discrete"
    alpha = 2.0

    def __post_init__(self):
        a, p = np.asarray(self.atoms, float), np.asarray(self.probs, float)
        if a.shape != p.shape or np.any(a <= 0) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("discrete weights need positive atoms and probabilities summing to 1")
        object.__setattr__(self, "atoms", tuple(a))
        object.__setattr__(self, "probs", tuple(p))

    @property
    def sigma(self) -> float:
        a, p = np.asarray(self.atoms), np.asarray(self.probs)
        var = float(p @ a**2 - (p @ a) ** 2)
        return math.sqrt(var / 2.0)

    def moment(self, p):
        return float(np.asarray(self.probs) @ np.asarray(self.atoms) ** p)

    def _expect(self, fn, t):
        t = np.asarray(t, float)
        vals = fn(t[..., None] * np.asarray(self.atoms)) @ np.asarray(self.probs)
        return _scalar_or_array(vals, t)

    def one_minus_laplace(self, t):
        return self._expect(lambda u: -np.expm1(-u), t)

    def psi_mean(self, t):
        return self._expect(psi, t)

    def sample(self, rng, size=None):
        return rng.choice(np.asarray(self.atoms), size=size, p=np.asarray(self.probs))

    def to_dict(self):
        return {"form": self.form, "atoms": list(self.atoms), "probs": list(self.probs)}


def sample_radius(law: RadiusLaw, rho: float, rng: np.random.Generator, size=None):
    return law.sample(rng, size, rho=rho)


def sample_weight(law: WeightLaw, rng: np.random.Generator, size=None):
    return law.sample(rng, size)


# ---------------------------------------------------------------------------
# small-balls constant
# ---------------------------------------------------------------------------


def one_minus_cos_integral(gamma: float) -> float:
    """int_0^inf (1 - cos r) / r^(1+gamma) dr in closed form, 0 < gamma < 2."""
    return math.pi / (2.0 * math.gamma(1.0 + gamma) * math.sin(math.pi * gamma / 2.0))


def one_minus_cos_integral_quad(gamma: float) -> float:
    """Same integral by adaptive quadrature (an independent route)."""
    A = 2.0 * math.pi
    # (1 - cos r) / r^2 is smooth, the r^(1-gamma) singularity goes into the weight
    g = lambda r: 0.5 if r < 1e-8 else (1.0 - math.cos(r)) / (r * r)
    head, _ = integrate.quad(g, 0.0, A, weight="alg", wvar=(1.0 - gamma, 0.0), epsabs=0, epsrel=1e-13)
    tail_pow = A ** (-gamma) / gamma
    # two integrations by parts (sin A = 0, cos A = 1) leave a faster-decaying tail
    rest, _ = integrate.quad(lambda r: r ** (-3.0 - gamma), A, np.inf, weight="cos", wvar=1.0,
                             epsabs=1e-13, limlst=200)
    tail_cos = (1.0 + gamma) * (A ** (-2.0 - gamma) - (2.0 + gamma) * rest)
    return head + tail_pow - tail_cos


@dataclass(frozen=True)
class SigmaGamma:
    value: float
    gamma: float
    cos_integral_quad: float
    cos_integral_closed: float
    weight_moment: float

    @property
    def cross_check_gap(self) -> float:
        return abs(self.cos_integral_quad - self.cos_integral_closed) / self.cos_integral_closed


def sigma_gamma(radius: RadiusLaw, weight: WeightLaw, gamma: float, d: int) -> SigmaGamma:
    """sigma_gamma with sigma_gamma^gamma = C_beta v_d^gamma / d * I(gamma) * E[m^gamma]."""
    if not (1.0 < gamma < 2.0):
        raise GammaOutOfRange(f"gamma={gamma} outside (1, 2)")
    if gamma >= weight.alpha and weight.alpha < 2.0:
        raise MomentDiverges(f"E[m^gamma] infinite: gamma={gamma} >= alpha={weight.alpha}")
    mom = weight.moment(gamma)
    closed = one_minus_cos_integral(gamma)
    quad = one_minus_cos_integral_quad(gamma)
    val = radius.C_beta * unit_ball_volume(d) ** gamma / d * quad * mom
    return SigmaGamma(val ** (1.0 / gamma), gamma, quad, closed, mom)
