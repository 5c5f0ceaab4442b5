"""Test measures, ball masses and the weighted random-balls mass field.

The field of a marked configuration {(x_i, r_i, m_i)} against a signed
measure mu is sum_i m_i mu(B(x_i, r_i)).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import CertificateFailed, RegimeParameterMismatch
from .marks import RadiusLaw, WeightLaw, unit_ball_volume
from .quadrature import (
    ScaledRadiusDensity,
    gauss_legendre01,
    radial_integral,
    spatial_rule,
    two_resolution,
)

_GAUSS_REACH = 9.0  # mass beyond 9 widths is below exp(-81)


def _pts(X, d):
    X = np.asarray(X, float)
    if X.ndim == 0 or (X.ndim == 1 and d == 1):
        X = X.reshape(-1, 1)
    return np.atleast_2d(X)


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


class Measure:
    """Finite signed measure on R^d with a ball-mass evaluator.

    Subclasses implement ``ball_mass(X, r)`` (vectorized over rows of X
    and entries of r), ``radial_knots(X)`` (radii where r -> mu(B(x,r))
    may kink, plus the radius beyond which it is constant), the support box
    and the density.
    """

    d: int
    form: str

    @property
    def total_mass(self) -> float:
        raise NotImplementedError

    @property
    def total_variation(self) -> float:
        raise NotImplementedError

    @property
    def is_nonnegative(self) -> bool:
        return True

    @property
    def has_density(self) -> bool:
        return True

    def density(self, X):
        raise NotImplementedError

    def density_sup(self) -> float:
        raise NotImplementedError

    def support_box(self):
        raise NotImplementedError

    def spatial_breaks(self):
        """Per-axis coordinates where the density may be non-smooth."""
        lo, hi = self.support_box()
        return [[lo[k], hi[k]] for k in range(self.d)]

    def ball_mass(self, X, r):
        raise NotImplementedError

    def radial_knots(self, X):
        raise NotImplementedError

    def scaled(self, c: float) -> "Measure":
        return SignedCombination(((float(c), self),))

    def dilated(self, a: float) -> "Measure":
        return Dilated(self, float(a))

    def __add__(self, other):
        return SignedCombination(((1.0, self), (1.0, other)))

    def __rmul__(self, c):
        return self.scaled(c)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class IntervalMeasure(Measure):
    """Density ``height`` on [center - half_length, center + half_length] (d = 1)."""

    center: float = 0.0
    half_length: float = 0.5
    height: float = 1.0
    d: int = field(default=1, init=False)
    form: str = field(default="interval_indicator", init=False)

    def __post_init__(self):
        if self.half_length <= 0:
            raise ValueError("half_length must be positive")

    @property
    def total_mass(self):
        return 2.0 * self.half_length * self.height

    @property
    def total_variation(self):
        return abs(self.total_mass)

    @property
    def is_nonnegative(self):
        return self.height >= 0

    def density(self, X):
        x = _pts(X, 1)[:, 0]
        return np.where(np.abs(x - self.center) <= self.half_length, self.height, 0.0)

    def density_sup(self):
        return abs(self.height)

    def support_box(self):
        return np.array([self.center - self.half_length]), np.array([self.center + self.half_length])

    def ball_mass(self, X, r):
        x = _pts(X, 1)[:, 0]
        r = np.asarray(r, float)
        a, b = self.center - self.half_length, self.center + self.half_length
        return self.height * np.clip(np.minimum(x + r, b) - np.maximum(x - r, a), 0.0, None)

    def radial_knots(self, X):
        x = _pts(X, 1)[:, 0]
        da = np.abs(x - (self.center - self.half_length))
        db = np.abs(x - (self.center + self.half_length))
        return np.minimum(da, db)[:, None], np.maximum(da, db)

    def to_dict(self):
        return {"form": self.form, "center": self.center, "half_length": self.half_length, "height": self.height}


@dataclass(frozen=True)
class BoxMeasure(Measure):
    """Density ``height`` on an axis-aligned box in R^2."""

    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)
    height: float = 1.0
    nodes: int = 24
    d: int = field(default=2, init=False)
    form: str = field(default="box_indicator", init=False)

    def __post_init__(self):
        lo, hi = tuple(map(float, self.lo)), tuple(map(float, self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != 2 or len(hi) != 2 or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("box needs two increasing coordinate ranges")

    @property
    def total_mass(self):
        return self.height * (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])

    @property
    def total_variation(self):
        return abs(self.total_mass)

    @property
    def is_nonnegative(self):
        return self.height >= 0

    def density(self, X):
        X = _pts(X, 2)
        inside = np.all((X >= np.array(self.lo)) & (X <= np.array(self.hi)), axis=1)
        return np.where(inside, self.height, 0.0)

    def density_sup(self):
        return abs(self.height)

    def support_box(self):
        return np.array(self.lo), np.array(self.hi)

    def ball_mass(self, X, r):
        """Disk-box overlap by Gauss-Legendre in the angle y1 = x1 + r sin t.

        The integrand r cos t * |chord(t) cap [lo2, hi2]| is smooth between
        the breakpoints where the chord meets a box edge, so a few nodes per
        piece reach machine accuracy.
        """
        X = _pts(X, 2)
        r = np.broadcast_to(np.asarray(r, float), (len(X),))
        (a1, a2), (b1, b2) = self.lo, self.hi
        x1, x2 = X[:, 0], X[:, 1]
        rs = np.where(r > 0, r, 1.0)
        half = np.pi / 2

        def arcsin_c(v):
            return np.arcsin(np.clip(v, -1.0, 1.0))

        def arccos_c(v):
            return np.arccos(np.clip(v, -1.0, 1.0))

        t_lo = arcsin_c((a1 - x1) / rs)
        t_hi = arcsin_c((b1 - x1) / rs)
        c1 = arccos_c(np.abs(x2 - a2) / rs)
        c2 = arccos_c(np.abs(x2 - b2) / rs)
        br = np.stack([t_lo, t_hi, -c1, c1, -c2, c2, np.full_like(x1, -half), np.full_like(x1, half)], axis=1)
        br = np.clip(br, t_lo[:, None], t_hi[:, None])
        br = np.sort(br, axis=1)
        t, wt = gauss_legendre01(self.nodes)
        lo_, hi_ = br[:, :-1], br[:, 1:]
        T = lo_[..., None] + (hi_ - lo_)[..., None] * t
        Wt = (hi_ - lo_)[..., None] * wt
        ch = rs[:, None, None] * np.cos(T)
        top = np.minimum(x2[:, None, None] + ch, b2)
        bot = np.maximum(x2[:, None, None] - ch, a2)
        val = np.clip(top - bot, 0.0, None) * rs[:, None, None] * np.cos(T)
        out = self.height * np.sum(Wt * val, axis=(1, 2))
        return np.where(r > 0, out, 0.0)

    def radial_knots(self, X):
        X = _pts(X, 2)
        lo, hi = np.array(self.lo), np.array(self.hi)
        gap = np.maximum(np.maximum(lo - X, X - hi), 0.0)
        near = np.sqrt(np.sum(gap**2, axis=1))
        edges = np.abs(np.concatenate([X - lo, X - hi], axis=1))
        corners = np.stack(
            [np.hypot(X[:, 0] - cx, X[:, 1] - cy) for cx in (lo[0], hi[0]) for cy in (lo[1], hi[1])], axis=1
        )
        knots = np.concatenate([near[:, None], edges, corners], axis=1)
        return knots, corners.max(axis=1)

    def to_dict(self):
        return {"form": self.form, "lo": list(self.lo), "hi": list(self.hi), "height": self.height}


@dataclass(frozen=True)
class GaussianBump(Measure):
    """Density A exp(-|x - c|^2 / w^2) on R^d."""

    center: tuple = (0.0,)
    width: float = 1.0
    amplitude: float = 1.0
    nodes: int = 40
    form: str = field(default="gaussian_bump", init=False)

    def __post_init__(self):
        c = tuple(np.atleast_1d(np.asarray(self.center, float)).tolist())
        object.__setattr__(self, "center", c)
        if self.width <= 0:
            raise ValueError("width must be positive")
        if len(c) not in (1, 2):
            raise ValueError("gaussian bump supports d = 1 or 2")

    @property
    def d(self):
        return len(self.center)

    @property
    def total_mass(self):
        return self.amplitude * (math.sqrt(math.pi) * self.width) ** self.d

    @property
    def total_variation(self):
        return abs(self.total_mass)

    @property
    def is_nonnegative(self):
        return self.amplitude >= 0

    def density(self, X):
        X = _pts(X, self.d)
        return self.amplitude * np.exp(-np.sum((X - np.array(self.center)) ** 2, axis=1) / self.width**2)

    def density_sup(self):
        return abs(self.amplitude)

    def support_box(self):
        c = np.array(self.center)
        return c - _GAUSS_REACH * self.width, c + _GAUSS_REACH * self.width

    def spatial_breaks(self):
        c = np.array(self.center)
        return [[c[k] - 2 * self.width, c[k], c[k] + 2 * self.width] for k in range(self.d)]

    def ball_mass(self, X, r, nodes: int | None = None):
        X = _pts(X, self.d)
        r = np.broadcast_to(np.asarray(r, float), (len(X),))
        w = self.width
        if self.d == 1:
            x = X[:, 0] - self.center[0]
            half = 0.5 * math.sqrt(math.pi) * w * self.amplitude
            # the mass is even in x; erfc keeps the far tail accurate
            xa = np.abs(x)
            hi, lo = (xa + r) / w, (xa - r) / w
            big = np.empty_like(hi)
            tail = lo > 0
            big[tail] = special.erfc(lo[tail]) - special.erfc(hi[tail])
            big[~tail] = special.erf(hi[~tail]) + special.erf(-lo[~tail])
            # the erf difference cancels when the density barely varies over the ball;
            # integrate it directly there
            near = np.flatnonzero(r * np.maximum(xa, w) < 0.25 * w * w)
            if near.size:
                t, wt = gauss_legendre01(8)
                xs, rs = xa[near], r[near]
                y = (xs[:, None] + rs[:, None] * (2.0 * t - 1.0)) / w
                big[near] = (4.0 / math.sqrt(math.pi)) * (rs / w) * (np.exp(-y * y) @ wt)
            return half * big
        # d = 2: radial integral of the angular average, 2 pi I0 with scaling
        delta = np.hypot(X[:, 0] - self.center[0], X[:, 1] - self.center[1])
        n = nodes or self.nodes
        br = np.stack([np.zeros_like(r), delta - 3 * w, delta, delta + 3 * w, r], axis=1)
        br = np.sort(np.clip(br, 0.0, r[:, None]), axis=1)
        t, wt = gauss_legendre01(n)
        lo_, hi_ = br[:, :-1], br[:, 1:]
        R = lo_[..., None] + (hi_ - lo_)[..., None] * t
        Wt = (hi_ - lo_)[..., None] * wt
        z = 2.0 * R * delta[:, None, None] / w**2
        val = 2.0 * np.pi * R * np.exp(-((R - delta[:, None, None]) ** 2) / w**2) * special.i0e(z)
        return self.amplitude * np.sum(Wt * val, axis=(1, 2))

    def radial_knots(self, X):
        X = _pts(X, self.d)
        delta = np.sqrt(np.sum((X - np.array(self.center)) ** 2, axis=1))
        w = self.width
        knots = np.stack([np.maximum(delta - 3 * w, 0), delta, delta + 3 * w], axis=1)
        return knots, delta + _GAUSS_REACH * w

    def to_dict(self):
        return {"form": self.form, "center": list(self.center), "width": self.width, "amplitude": self.amplitude}


@dataclass(frozen=True)
class SignedCombination(Measure):
    """Finite linear combination sum_k c_k mu_k."""

    terms: tuple = ()
    form: str = field(default="signed_combination", init=False)

    def __post_init__(self):
        terms = tuple((float(c), m) for c, m in self.terms)
        if not terms:
            raise ValueError("combination needs at least one term")
        if len({m.d for _, m in terms}) != 1:
            raise ValueError("all terms must share the dimension")
        object.__setattr__(self, "terms", terms)

    @property
    def d(self):
        return self.terms[0][1].d

    @property
    def total_mass(self):
        return sum(c * m.total_mass for c, m in self.terms)

    @property
    def total_variation(self):
        # exact when the components have disjoint supports, an upper bound otherwise
        return sum(abs(c) * m.total_variation for c, m in self.terms)

    @property
    def is_nonnegative(self):
        return all(c >= 0 and m.is_nonnegative for c, m in self.terms)

    @property
    def has_density(self):
        return all(m.has_density for _, m in self.terms)

    def density(self, X):
        return sum(c * m.density(X) for c, m in self.terms)

    def density_sup(self):
        return sum(abs(c) * m.density_sup() for c, m in self.terms)

    def support_box(self):
        boxes = [m.support_box() for _, m in self.terms]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def spatial_breaks(self):
        per = [m.spatial_breaks() for _, m in self.terms]
        return [sorted(set(sum((p[k] for p in per), []))) for k in range(self.d)]

    def ball_mass(self, X, r):
        return sum(c * m.ball_mass(X, r) for c, m in self.terms)

    def radial_knots(self, X):
        parts = [m.radial_knots(X) for _, m in self.terms]
        knots = np.concatenate([p[0] for p in parts] + [p[1][:, None] for p in parts], axis=1)
        return knots, np.max(np.stack([p[1] for p in parts], axis=1), axis=1)

    def to_dict(self):
        return {"form": self.form, "terms": [{"coef": c, "measure": m.to_dict()} for c, m in self.terms]}


@dataclass(frozen=True)
class Dilated(Measure):
    """(D_a mu)(B) = mu(B / a)."""

    base: Measure = None
    a: float = 1.0
    form: str = field(default="dilated", init=False)

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("dilation factor must be positive")

    @property
    def d(self):
        return self.base.d

    @property
    def total_mass(self):
        return self.base.total_mass

    @property
    def total_variation(self):
        return self.base.total_variation

    @property
    def is_nonnegative(self):
        return self.base.is_nonnegative

    @property
    def has_density(self):
        return self.base.has_density

    def density(self, X):
        return self.base.density(_pts(X, self.d) / self.a) / self.a**self.d

    def density_sup(self):
        return self.base.density_sup() / self.a**self.d

    def support_box(self):
        lo, hi = self.base.support_box()
        return lo * self.a, hi * self.a

    def spatial_breaks(self):
        return [[v * self.a for v in ax] for ax in self.base.spatial_breaks()]

    def ball_mass(self, X, r):
        return self.base.ball_mass(_pts(X, self.d) / self.a, np.asarray(r, float) / self.a)

    def radial_knots(self, X):
        k, s = self.base.radial_knots(_pts(X, self.d) / self.a)
        return k * self.a, s * self.a

    def to_dict(self):
        return {"form": self.form, "a": self.a, "base": self.base.to_dict()}


def measure_from_dict(cfg: dict) -> Measure:
    cfg = dict(cfg)
    form = cfg.pop("form")
    if form == "interval_indicator":
        return IntervalMeasure(**cfg)
    if form == "box_indicator":
        return BoxMeasure(**cfg)
    if form == "gaussian_bump":
        return GaussianBump(**cfg)
    if form == "signed_combination":
        return SignedCombination(tuple((t["coef"], measure_from_dict(t["measure"])) for t in cfg["terms"]))
    if form == "dilated":
        return Dilated(measure_from_dict(cfg["base"]), cfg["a"])
    raise ValueError(f"unknown measure form {form!r}")


def ball_mass(mu: Measure, x, r):
    return mu.ball_mass(x, r)


# ---------------------------------------------------------------------------
# field values
# ---------------------------------------------------------------------------


def field_value(config, mu: Measure) -> float:
    """sum_i m_i mu(B(x_i, r_i)) over the atoms of a marked configuration."""
    if len(config) == 0:
        return 0.0
    return float(np.sum(config.weights * mu.ball_mass(config.points, config.radii)))


@dataclass(frozen=True)
class FieldSample:
    value: float
    centered: float
    normalized: float
    rho: float
    n_rho: float
    replicate_id: int


def field_samples(values, expectation: float, n_rho: float, rho: float) -> list[FieldSample]:
    if n_rho <= 0:
        raise ValueError("normalization must be positive")
    out = []
    for i, v in enumerate(np.asarray(values, float)):
        c = v - expectation
        out.append(FieldSample(float(v), float(c), float(c / n_rho), float(rho), float(n_rho), i))
    return out


def field_samples_to_csv(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rho", "replicate_id", "value", "centered", "normalized"])
        for s in samples:
            w.writerow([repr(s.rho), s.replicate_id, repr(s.value), repr(s.centered), repr(s.normalized)])


# ---------------------------------------------------------------------------
# expectations
# ---------------------------------------------------------------------------


def spatial_points(window, mu: Measure, mode: str, level: int = 1, panels: int = 24, n: int = 6,
                   n_sub: int = 6, offsets=(), grade: int = 0):
    """Spatial rule over the window.

    ``mode='continuum'``: composite Gauss-Legendre with the measure's
    breakpoints. ``mode='cells'``: sub-points of every quadrature cell, so
    that sums reproduce the jittered finite process exactly.
    ``offsets`` shifts the measure's breakpoints (e.g. by the smallest
    radius, where the radial integral kinks in x).
    Returns (points, weights, node_index); node_index maps each point to
    its cell (or -1 in continuum mode).
    """
    if mode == "continuum":
        breaks = [[b + o for b in ax for o in (0.0, *offsets, *(-o for o in offsets))]
                  for ax in mu.spatial_breaks()]
        X, W = spatial_rule(window.bounds, breaks, panels * level, n, core=mu.support_box(),
                            grade=grade * level)
        return X, W, np.full(len(X), -1)
    if mode == "cells":
        pts, frac = window.sub_nodes(n_sub * level)
        N, S, d = pts.shape
        W = (window.weights[:, None] * frac).ravel()
        return pts.reshape(N * S, d), W, np.repeat(np.arange(N), S)
    raise ValueError(f"unknown spatial mode {mode!r}")


def diag_at(kernel, window, X, idx):
    """K(x,x) at spatial points; in cell mode the node value is used."""
    if idx[0] >= 0:
        return kernel.diag(window.nodes)[idx]
    return kernel.diag(X)


def field_expectation(scaled, window, radius: RadiusLaw, weight: WeightLaw, mu: Measure, rho: float,
                      mode: str = "continuum", rel_tol: float = 1e-5, **rule) -> float:
    """E[M_rho(mu)] for centers in the window.

    E = E[m] int_W int mu(B(x, r)) K_rho(x, x) f(r / rho) / rho dr dx.
    """
    kernel = scaled.at(rho)
    dens = ScaledRadiusDensity(radius, rho)

    def at(level):
        X, W, idx = spatial_points(window, mu, mode, level, offsets=(dens.lower,), **rule)
        radial = radial_integral(mu, X, lambda v: v, dens, n=6 + 2 * level, G=4 * level, h_power=1.0)
        return float(np.sum(W * diag_at(kernel, window, X, idx) * radial))

    val, _ = two_resolution(at, rel_tol, 1e-14, "field expectation")
    return weight.mean * float(val)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Normalization:
    n: float
    gamma: float | None = None


def normalization(regime: str, lambda_rho: float, rho: float, alpha: float, beta: float, d: int) -> Normalization:
    """Scaling n(rho) of the centered field in each regime."""
    if not (d < beta < 2 * d):
        raise RegimeParameterMismatch(f"need d < beta < 2d, got beta={beta}")
    lrb = lambda_rho * rho**beta
    if regime == "large":
        return Normalization(lrb ** (1.0 / alpha))
    if regime == "intermediate":
        return Normalization(1.0)
    if regime == "small":
        if beta >= alpha * d:
            raise RegimeParameterMismatch(f"small balls need beta < alpha d, got beta={beta}, alpha={alpha}")
        gamma = beta / d
        return Normalization(lrb ** (1.0 / gamma), gamma)
    raise RegimeParameterMismatch(f"unknown regime {regime!r}")


# ---------------------------------------------------------------------------
# M_{alpha,beta} certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MabCertificate:
    alpha: float
    beta: float
    p: float
    q: float
    C_mu: float
    check_grid: np.ndarray
    values: np.ndarray  # I(r) on the grid

    def __post_init__(self):
        if not (0 < self.p < self.beta < self.q):
            raise ValueError("certificate needs 0 < p < beta < q")

    def holds_at(self, r, value) -> bool:
        return value <= self.C_mu * min(r**self.p, r**self.q) * (1 + 1e-6)


def ball_power_integral(mu: Measure, alpha: float, r: float, panels: int = 16, n: int = 8) -> float:
    """I(r) = int_{R^d} |mu(B(x, r))|^alpha dx by composite Gauss-Legendre."""
    lo, hi = mu.support_box()
    bounds = [(lo[k] - r, hi[k] + r) for k in range(mu.d)]
    breaks = [[b + s for b in ax for s in (-r, 0.0, r)] for ax in mu.spatial_breaks()]
    X, W = spatial_rule(bounds, breaks, panels, n)
    vals = np.abs(mu.ball_mass(X, np.full(len(X), r))) ** alpha
    return float(np.sum(W * vals))


def verify_mab(mu: Measure, alpha: float, beta: float, p: float, q: float,
               grid=None, growth_tol: float = 2.0) -> MabCertificate:
    """Certificate int |mu(B(x,r))|^alpha dx <= C_mu min(r^p, r^q) on a log grid.

    Fails when the ratio I(r) / min(r^p, r^q) keeps growing at either end
    of the grid (by more than ``growth_tol`` over the last decade).
    """
    if not (0 < p < beta < q):
        raise ValueError("need 0 < p < beta < q")
    grid = np.logspace(-3, 3, 61) if grid is None else np.asarray(grid, float)
    vals = np.array([ball_power_integral(mu, alpha, r) for r in grid])
    ratio = vals / np.minimum(grid**p, grid**q)
    if not np.all(np.isfinite(ratio)):
        raise CertificateFailed("non-finite ratio on the check grid")
    dec = max(2, int(round(len(grid) / np.log10(grid[-1] / grid[0]))))
    for end in (ratio[:dec], ratio[-dec:][::-1]):
        # end[0] is the outermost grid value
        if end[0] > growth_tol * end[-1] and end[0] > 1e-12 * ratio.max():
            raise CertificateFailed(
                f"ratio I(r)/min(r^p, r^q) grows toward the grid end (p={p}, q={q})"
            )
    C = float(ratio.max())
    return MabCertificate(alpha, beta, p, q, C, grid, vals)


def fubini_expectation(kernel_diag_value: float, weight: WeightLaw, radius: RadiusLaw, mu: Measure, rho: float) -> float:
    """c E[m] v_d mu(R^d) rho^d E[R^d] for a constant diagonal c (no window)."""
    return (kernel_diag_value * weight.mean * unit_ball_volume(mu.d) * mu.total_mass
            * rho**mu.d * radius.mean_power(mu.d))
