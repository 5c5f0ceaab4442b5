"""One-dimensional marginals of the three scaling limits.

All control measures are restricted to centers in the simulation window,
matching the finite-window model whose fields they are compared against.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import TruncationBudgetExceeded
from .fields import Measure, spatial_points
from .marks import RadiusLaw, SigmaGamma, StableLaw, WeightLaw, psi, sample_stable
from .quadrature import LevyRadiusDensity, radial_integral, spatial_rule, two_resolution

__all__ = [
    "psi",
    "LimitMarginal",
    "stable_marginal_large",
    "poisson_exponent_intermediate",
    "sample_poisson_field",
    "PoissonFieldDraws",
    "stable_marginal_small",
]


@dataclass(frozen=True)
class LimitMarginal:
    """Marginal law of a limit field evaluated at one test measure.

    For ``stable_alpha`` and ``stable_gamma`` the law is S_index(scale,
    skewness, 0). For ``poisson_intermediate`` the law is described by its
    Laplace exponent E, with log E[exp(-theta X)] = E(theta).
    """

    kind: str
    index: float | None = None
    scale: float | None = None
    skewness: float | None = None
    shift: float = 0.0
    a: float | None = None
    exponent: Callable | None = field(default=None, repr=False, compare=False)
    quad_error: float = 0.0

    def __post_init__(self):
        if self.kind not in ("stable_alpha", "poisson_intermediate", "stable_gamma"):
            raise ValueError(f"unknown limit kind {self.kind!r}")
        if self.kind != "poisson_intermediate" and not (self.scale and self.scale > 0):
            raise ValueError("stable scale must be positive")

    @property
    def stable(self) -> StableLaw:
        return StableLaw(self.index, self.scale, self.skewness, self.shift)

    def log_laplace(self, theta):
        if self.kind == "poisson_intermediate":
            return self.exponent(theta)
        return self.stable.log_laplace(theta)

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "poisson_intermediate":
            raise NotImplementedError("use sample_poisson_field for the intermediate limit")
        return sample_stable(self.stable, rng, size)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "index": self.index,
            "scale": self.scale,
            "skewness": self.skewness,
            "shift": self.shift,
            "a": self.a,
            "quad_error": self.quad_error,
        }


def _levy(radius: RadiusLaw) -> LevyRadiusDensity:
    return LevyRadiusDensity(radius.C_beta, radius.beta)


def _spatial_radial(mu, kernel, window, H, density, h_power, level, panels=24, n=6, offsets=(), grade=12):
    X, W, _ = spatial_points(window, mu, "continuum", level, panels=panels, n=n, offsets=offsets, grade=grade)
    rad = radial_integral(mu, X, H, density, n=6 + 2 * level, G=4 + 2 * level, h_power=h_power)
    return float(np.sum(W * kernel.diag(X) * rad))


def stable_marginal_large(mu: Measure, kernel, window, radius: RadiusLaw, weight: WeightLaw,
                          rel_tol: float = 1e-6) -> LimitMarginal:
    """S_alpha marginal of the large-balls limit.

    scale^alpha = sigma^alpha int_W int |mu(B(x,r))|^alpha K(x,x) C_beta r^(-beta-1) dr dx
    """
    alpha = weight.alpha
    if alpha * mu.d <= radius.beta:
        raise ValueError("need alpha d > beta for the small-r integral to converge")
    H = lambda v: np.abs(v) ** alpha
    val, err = two_resolution(
        lambda lv: _spatial_radial(mu, kernel, window, H, _levy(radius), alpha, lv), rel_tol,
        what="large-balls scale",
    )
    scale = weight.limit_sigma * float(val) ** (1.0 / alpha)
    return LimitMarginal("stable_alpha", alpha, scale, weight.skewness, 0.0, quad_error=err)


def poisson_exponent_intermediate(mu: Measure, a: float, thetas, kernel, window, radius: RadiusLaw,
                                  weight: WeightLaw, rel_tol: float = 1e-6, lower: float = 0.0):
    """E(theta) = int psi(theta m (D_a mu)(B(x,r))) K(x,x) C_beta r^(-beta-1) G(dm) dx dr.

    ``lower`` restricts radii to r >= lower (the truncated process simulated
    by ``sample_poisson_field``).
    """
    nu = mu if a == 1.0 else mu.dilated(a)
    dens = LevyRadiusDensity(radius.C_beta, radius.beta, lower)
    out = []
    for th in np.atleast_1d(np.asarray(thetas, float)):
        if th == 0.0:
            out.append(0.0)
            continue
        H = lambda v, th=th: weight.psi_mean(th * v)
        val, _ = two_resolution(
            lambda lv: _spatial_radial(nu, kernel, window, H, dens, 2.0, lv, offsets=(lower,) if lower else ()),
            rel_tol, 1e-15, "poisson exponent",
        )
        out.append(float(val))
    out = np.array(out)
    return out if np.ndim(thetas) else float(out[0])


def intermediate_marginal(mu, a, kernel, window, radius, weight, rel_tol=1e-6) -> LimitMarginal:
    fn = lambda th: poisson_exponent_intermediate(mu, a, th, kernel, window, radius, weight, rel_tol)
    return LimitMarginal("poisson_intermediate", a=a, exponent=fn)


# ---------------------------------------------------------------------------
# Poisson field sampler
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonFieldDraws:
    values: np.ndarray  # compensated draws
    epsilon: float
    mean: float  # compensator of the retained part
    retained_variance: float
    discarded_variance: float

    @property
    def discarded_fraction(self) -> float:
        tot = self.retained_variance + self.discarded_variance
        return self.discarded_variance / tot if tot > 0 else 0.0


def _sample_centers(kernel, window, n, rng):
    """Centers with density proportional to K(x,x) on the window."""
    lo = np.array([b[0] for b in window.bounds])
    hi = np.array([b[1] for b in window.bounds])
    if getattr(kernel, "envelope", None) is None:
        return lo + (hi - lo) * rng.random((n, len(lo)))
    out = np.empty((0, len(lo)))
    top = kernel.sup_diag
    while len(out) < n:
        m = max(16, int(1.5 * (n - len(out))))
        X = lo + (hi - lo) * rng.random((m, len(lo)))
        keep = rng.random(m) * top < kernel.diag(X)
        out = np.concatenate([out, X[keep]])
    return out[:n]


def _diag_integral(kernel, window, level=2):
    X, W = spatial_rule(window.bounds, None, 32 * level, 8)
    return float(np.sum(W * kernel.diag(X)))


def sample_poisson_field(mu: Measure, a: float, kernel, window, radius: RadiusLaw, weight: WeightLaw,
                         epsilon: float, rng: np.random.Generator, size: int = 1,
                         budget: float = 0.01) -> PoissonFieldDraws:
    """Compensated Poisson integral of m (D_a mu)(B(x,r)) with radii r >= epsilon.

    The intensity is K(x,x) C_beta r^(-beta-1) dx dr G(dm) on the window.
    Radii above epsilon are drawn exactly (Pareto from epsilon); the
    compensated contribution of radii below epsilon is dropped and its
    variance is reported.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    nu = mu if a == 1.0 else mu.dilated(a)
    C, beta = radius.C_beta, radius.beta
    mass_x = _diag_integral(kernel, window)
    lam_total = mass_x * C * epsilon ** (-beta) / beta

    full = LevyRadiusDensity(C, beta)
    kept = LevyRadiusDensity(C, beta, epsilon)
    sq = lambda v: v * v
    # with alpha < 2 weights the variance is infinite; the budget is then
    # checked on the second moment of the ball masses alone
    m2 = weight.moment(2.0) if weight.alpha == 2.0 else 1.0
    var_full = m2 * _spatial_radial(nu, kernel, window, sq, full, 2.0, 2)
    var_kept = m2 * _spatial_radial(nu, kernel, window, sq, kept, 2.0, 2, offsets=(epsilon,))
    discarded = max(var_full - var_kept, 0.0)
    mean = weight.mean * _spatial_radial(nu, kernel, window, lambda v: v, kept, 1.0, 2, offsets=(epsilon,))
    if discarded > budget * var_full:
        raise TruncationBudgetExceeded(
            f"discarded variance fraction {discarded / var_full:.3g} exceeds {budget}"
        )

    counts = rng.poisson(lam_total, size)
    total = int(counts.sum())
    X = _sample_centers(kernel, window, total, rng)
    r = epsilon * (1.0 - rng.random(total)) ** (-1.0 / beta)
    m = np.asarray(weight.sample(rng, total), float)
    contrib = m * nu.ball_mass(X, r) if total else np.zeros(0)
    owner = np.repeat(np.arange(size), counts)
    sums = np.bincount(owner, weights=contrib, minlength=size)
    return PoissonFieldDraws(sums - mean, float(epsilon), float(mean), float(var_kept), float(discarded))


# ---------------------------------------------------------------------------
# small balls
# ---------------------------------------------------------------------------


def stable_marginal_small(mu: Measure, kernel, window, sigma: SigmaGamma | float, gamma: float,
                          rel_tol: float = 1e-6) -> LimitMarginal:
    """S_gamma(scale, 1, 0) with scale^gamma = sigma_gamma^gamma int_W phi^gamma K(x,x) dx."""
    if not mu.has_density or not mu.is_nonnegative:
        raise ValueError("the small-balls limit needs a nonnegative density")
    sg = sigma.value if isinstance(sigma, SigmaGamma) else float(sigma)

    def at(level):
        X, W = spatial_rule(window.bounds, mu.spatial_breaks(), 24 * level, 8, core=mu.support_box())
        return float(np.sum(W * mu.density(X) ** gamma * kernel.diag(X)))

    val, err = two_resolution(at, rel_tol, what="small-balls scale")
    return LimitMarginal("stable_gamma", gamma, sg * float(val) ** (1.0 / gamma), 1.0, 0.0, quad_error=err)
