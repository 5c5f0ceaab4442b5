"""Quadrature rules shared by the field, limit and Laplace computations.

Radial integrals have the form

    int_{r_lo}^inf H(mu(B(x, r))) p(r) dr

for a radial density p (a scaled radius law or a Levy density C r^(-beta-1))
and a function H with H(0) = 0. The ball mass is piecewise smooth in r with
breakpoints supplied by the measure, and constant beyond a saturation radius,
past which the integral is H(total mass) times the tail mass of p.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import QuadratureNotConverged


@lru_cache(maxsize=64)
def gauss_legendre01(n: int):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


# ---------------------------------------------------------------------------
# radial densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaledRadiusDensity:
    """p(r) = f(r / rho) / rho for a RadiusLaw f."""

    law: object
    rho: float

    @property
    def lower(self) -> float:
        return self.rho * self.law.support_start

    @property
    def small_power(self):
        # f(r) ~ r^(kappa - beta - 1) near 0 for the smoothed form
        return None if self.law.form == "pareto" else self.law.kappa - self.law.beta - 1.0

    def pdf(self, r):
        return self.law.pdf(r / self.rho) / self.rho

    def tail(self, r):
        return self.law.sf(np.asarray(r) / self.rho)


@dataclass(frozen=True)
class LevyRadiusDensity:
    """p(r) = C r^(-beta-1) on (0, inf)."""

    C: float
    beta: float
    lower: float = 0.0

    @property
    def small_power(self):
        return -self.beta - 1.0

    def pdf(self, r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, self.C * r ** (-self.beta - 1.0), 0.0)

    def tail(self, r):
        return self.C * np.asarray(r, float) ** (-self.beta) / self.beta


# ---------------------------------------------------------------------------
# radial rules
# ---------------------------------------------------------------------------


def radial_rule(lower, knots, r_sat, n: int = 8, G: int = 6, s: float | None = None):
    """Per-point radial nodes and weights on [lower, r_sat].

    ``knots`` has shape (P, K); ``lower`` and ``r_sat`` shape (P,). Each
    panel between consecutive sorted breakpoints is split into ``G``
    geometric sub-panels with ``n`` Gauss-Legendre nodes. A panel starting
    at 0 uses r = c v^(1/s) on its first sub-panel, which absorbs an
    r^(s-1) behaviour of the integrand.
    Returns (r, w), both of shape (P, M); zero-length panels get zero weight.
    """
    P = len(r_sat)
    lower = np.broadcast_to(np.asarray(lower, float), (P,))
    kn = np.atleast_2d(np.asarray(knots, float)).reshape(P, -1)
    kn = np.clip(kn, lower[:, None], r_sat[:, None])
    br = np.sort(np.concatenate([lower[:, None], kn, r_sat[:, None]], axis=1), axis=1)
    a, b = br[:, :-1], br[:, 1:]  # (P, Q)
    t, wt = gauss_legendre01(n)
    zero = a <= 0.0
    a_safe = np.where(zero, 1.0, a)
    ratio = np.where(b > a, b / a_safe, 1.0)
    # keep roughly G sub-panels per two decades of the widest panel
    decades = float(np.log10(np.max(np.where(zero, 1.0, ratio)))) if ratio.size else 0.0
    G = int(np.ceil(G * max(1.0, decades / 2.0)))
    j = np.arange(G + 1) / G
    geo = a_safe[..., None] * ratio[..., None] ** j  # (P, Q, G+1)
    # panels starting at 0: dyadic breaks b 2^(j-G), first piece [0, b 2^-G + ...]
    dy = b[..., None] * 2.0 ** (np.arange(G + 1) - G)
    dy[..., 0] = 0.0
    sub = np.where(zero[..., None], dy, geo)
    lo, hi = sub[..., :-1], sub[..., 1:]  # (P, Q, G)
    L = hi - lo
    # r = lo + L u^2 on the first sub-panel: H(mu(B(x, r))) may behave like
    # (r - a)^p at a knot where the ball starts to meet the support
    first_sub = (np.arange(G) == 0)[None, None, :, None] & ~zero[..., None, None]
    u = np.where(first_sub, t * t, t)
    du = np.where(first_sub, 2.0 * t, 1.0)
    r = lo[..., None] + L[..., None] * u
    w = L[..., None] * wt * du
    if s is not None and s > 0:
        first = zero[..., None] & (np.arange(G) == 0)[None, None, :]
        c = hi[..., 0]  # (P, Q)
        rs = c[..., None] * t ** (1.0 / s)
        ws = (c[..., None] / s) * t ** (1.0 / s - 1.0) * wt
        r = np.where(first[..., None], rs[..., None, :], r)
        w = np.where(first[..., None], ws[..., None, :], w)
    w = np.where((b > a)[..., None, None], w, 0.0)
    return r.reshape(P, -1), w.reshape(P, -1)


def radial_integral(mu, X, H, density, n: int = 8, G: int = 6, h_power: float = 1.0,
                    chunk: int = 4096):
    """int H(mu(B(x, r))) density(r) dr for each row of X.

    ``h_power`` is the small-argument power of H, used with the measure's
    small-ball growth r^d to pick the substitution near r = 0.
    """
    X = np.atleast_2d(np.asarray(X, float))
    out = np.empty(len(X))
    sp = density.small_power
    s = None if sp is None else sp + 1.0 + h_power * mu.d
    total = mu.total_mass
    Ht = float(np.asarray(H(np.array([total])))[0]) if total != 0 else 0.0
    for i0 in range(0, len(X), chunk):
        Xc = X[i0 : i0 + chunk]
        knots, r_sat = mu.radial_knots(Xc)
        r_sat = np.maximum(r_sat, density.lower)
        r, w = radial_rule(density.lower, knots, r_sat, n, G, s)
        P, M = r.shape
        mass = mu.ball_mass(np.repeat(Xc, M, axis=0), r.ravel()).reshape(P, M)
        vals = np.asarray(H(mass), float) * density.pdf(r)
        out[i0 : i0 + chunk] = np.sum(w * vals, axis=1) + Ht * density.tail(r_sat)
    return out


# ---------------------------------------------------------------------------
# spatial rules
# ---------------------------------------------------------------------------


def composite_gl(breaks, n: int):
    breaks = np.unique(np.asarray(breaks, float))
    t, wt = gauss_legendre01(n)
    a, b = breaks[:-1], breaks[1:]
    x = (a[:, None] + (b - a)[:, None] * t).ravel()
    w = ((b - a)[:, None] * wt).ravel()
    return x, w


def spatial_rule(bounds, extra_breaks=None, panels: int = 32, n: int = 8, core=None, grade: int = 0):
    """Tensor composite Gauss-Legendre rule on a box.

    ``extra_breaks`` is a per-axis list of points (e.g. support edges of a
    measure) added to the uniform panel breaks when they fall inside.
    With ``core=(lo, hi)`` breaks also double in distance away from the
    core box, which keeps wide windows accurate. ``grade`` adds that many
    geometrically shrinking panels on both sides of every extra break, for
    integrands with algebraic singularities there.
    """
    xs, ws = [], []
    for k, (lo, hi) in enumerate(bounds):
        br = list(np.linspace(lo, hi, panels + 1))
        if extra_breaks is not None:
            inner = [e for e in extra_breaks[k] if lo < e < hi]
            br += inner
            width = (hi - lo) / panels
            for e in inner:
                br += [e + sg * width * 2.0 ** (-j) for j in range(1, grade + 1) for sg in (-1.0, 1.0)
                       if lo < e + sg * width * 2.0 ** (-j) < hi]
        if core is not None:
            c_lo, c_hi = float(core[0][k]), float(core[1][k])
            span = max(c_hi - c_lo, 1e-12)
            step = span / 4
            while c_hi + step < hi or c_lo - step > lo:
                br += [v for v in (c_hi + step, c_lo - step) if lo < v < hi]
                step *= 2.0
        x, w = composite_gl(br, n)
        xs.append(x)
        ws.append(w)
    grids = np.meshgrid(*xs, indexing="ij")
    wgrids = np.meshgrid(*ws, indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return X, W


def two_resolution(fn, rel_tol: float, abs_tol: float = 0.0, what: str = "integral"):
    """Evaluate ``fn(level)`` at levels 1 and 2 and require agreement.

    Returns (fine value, relative gap).
    """
    coarse = np.asarray(fn(1), float)
    fine = np.asarray(fn(2), float)
    gap = np.abs(fine - coarse)
    scale = np.maximum(np.abs(fine), 1e-300)
    rel = float(np.max(gap / scale)) if gap.size else 0.0
    if np.any(gap > rel_tol * np.abs(fine) + abs_tol):
        raise QuadratureNotConverged(f"{what}: two-resolution gap {rel:.3e} exceeds {rel_tol:.1e}")
    return fine, rel
