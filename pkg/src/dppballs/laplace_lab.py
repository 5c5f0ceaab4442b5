"""Exact Laplace transforms of the centered mass field.

For h(x, r, m) = theta m mu(B(x, r)) / n, the marked kernel modified by
1 - exp(-h) factorizes through the marks: its nonzero spectrum is that of
the spatial kernel sqrt(W(x)) K_rho(x, y) sqrt(W(y)) with

    W(x) = int int (1 - exp(-h(x, r, m))) f(r / rho) / rho g(m) dr dm.

Then

    log E[exp(-theta M~ / n)] = theta E[M] / n + sum_i log(1 - lambda_i)
                              = first_order + remainder,

where first_order integrates psi(h) = exp(-h) - 1 + h against the marked
intensity and remainder = -sum_{k >= 2} Tr(K_eff^k) / k.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dpp_engine import LocationSampler
from .errors import (
    CertificateMissing,
    QuadratureNotConverged,
    RegimeParameterMismatch,
    SpectralNormAtLeastOne,
)
from .fields import MabCertificate, Measure, normalization
from .kernelspace import (
    BandedOperator,
    SpectralData,
    fredholm_log_det,
    modify_spectral,
    spectral_from_matrix,
)
from .marks import RadiusLaw, WeightLaw
from .quadrature import ScaledRadiusDensity, radial_integral

STUDY_COLUMNS = [
    "regime", "rho", "theta", "exact_log_lt", "first_order", "remainder",
    "limit_exponent", "gap", "tr2", "tr2_bound", "rate", "rate_bound",
]


@dataclass(frozen=True)
class LaplaceQuery:
    """Test function h(x, r, m) = theta m mu(B(x, r)) / n_rho."""

    theta: float
    mu: Measure
    rho: float
    regime: str = "intermediate"
    n_rho: float = 1.0

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if not self.mu.is_nonnegative:
            raise ValueError("h >= 0 needs a nonnegative measure")
        if self.n_rho <= 0:
            raise ValueError("n_rho must be positive")

    @property
    def t(self) -> float:
        """Coefficient of m mu(B(x, r)) in h."""
        return self.theta / self.n_rho

    def h(self, x, r, m):
        return self.t * np.asarray(m) * self.mu.ball_mass(x, r)

    @classmethod
    def for_regime(cls, theta, mu, rho, regime, scaled, radius: RadiusLaw, weight: WeightLaw):
        nrm = normalization(regime, scaled.lam(rho), rho, weight.alpha, radius.beta, mu.d)
        return cls(float(theta), mu, float(rho), regime, nrm.n)


# ---------------------------------------------------------------------------
# node-level radial integrals
# ---------------------------------------------------------------------------


def _cell_points(window, mode, n_sub):
    if mode == "nodes":
        X = window.nodes
        return X, np.ones(len(X)), np.arange(len(X))
    pts, frac = window.sub_nodes(n_sub)
    N, S, d = pts.shape
    return pts.reshape(N * S, d), frac.ravel(), np.repeat(np.arange(N), S)


def node_integrals(mu, window, H, density, h_power, mode="cells", n_sub=4, level=1):
    """Per node: (cell average of) int H(mu(B(x, r))) density(r) dr."""
    X, frac, owner = _cell_points(window, mode, n_sub)
    vals = radial_integral(mu, X, H, density, n=8 + 4 * (level - 1), G=6 + 4 * (level - 1), h_power=h_power)
    return np.bincount(owner, weights=frac * vals, minlength=len(window.nodes))


def _checked_node_integrals(mu, window, H, density, h_power, mode, n_sub, rel_tol, what):
    a = node_integrals(mu, window, H, density, h_power, mode, n_sub, 1)
    b = node_integrals(mu, window, H, density, h_power, mode, n_sub, 2)
    top = float(np.max(np.abs(b), initial=0.0))
    gap = float(np.max(np.abs(a - b), initial=0.0))
    if gap > rel_tol * top + 1e-300:
        raise QuadratureNotConverged(f"{what}: two-resolution gap {gap:.3e} vs scale {top:.3e}")
    return b


# ---------------------------------------------------------------------------
# reduction of the marked operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkRule:
    """Explicit finite mark quadrature: radii (already scaled by rho) and masses."""

    radii: np.ndarray
    radius_weights: np.ndarray
    masses: np.ndarray
    mass_weights: np.ndarray


@dataclass(frozen=True)
class EffectiveOperator:
    node_weights: np.ndarray  # W(x_i)
    diag: np.ndarray  # K_rho(x_i, x_i)
    quad_weights: np.ndarray  # w_i
    operator: object  # SpectralData or BandedOperator of K_eff

    @property
    def trace_quadrature(self) -> float:
        """sum_i w_i W(x_i) K_rho(x_i, x_i)."""
        return float(np.sum(self.quad_weights * self.node_weights * self.diag))

    @property
    def trace(self) -> float:
        return float(self.operator.trace)

    @property
    def banded(self) -> bool:
        return isinstance(self.operator, BandedOperator)


def _sampler_for(scaled, window, rho, sampler):
    return sampler if sampler is not None else LocationSampler(scaled.at(rho), window)


def reduce_marked_operator(query: LaplaceQuery, scaled, window, radius: RadiusLaw, weight: WeightLaw, *,
                           sampler: LocationSampler | None = None, mode: str = "cells", n_sub: int = 4,
                           mark_rule: MarkRule | None = None, rel_tol: float = 1e-9) -> EffectiveOperator:
    """Spatial kernel with the same nonzero spectrum as the modified marked kernel.

    ``mode='cells'`` averages W over each quadrature cell, which makes the
    result exact for the jittered finite process that the sampler draws.
    ``mode='nodes'`` evaluates W at the nodes (plain Nystrom).
    """
    sampler = _sampler_for(scaled, window, query.rho, sampler)
    win = sampler.window
    base = sampler.operator
    kernel = sampler.kernel
    t = query.t
    if mark_rule is not None:
        X, frac, owner = _cell_points(win, mode, n_sub)
        R = mark_rule.radii
        mass = query.mu.ball_mass(np.repeat(X, len(R), axis=0), np.tile(R, len(X))).reshape(len(X), len(R))
        one = -np.expm1(-t * mass[:, :, None] * mark_rule.masses[None, None, :])
        vals = np.einsum("pjk,j,k->p", one, mark_rule.radius_weights, mark_rule.mass_weights)
        W = np.bincount(owner, weights=frac * vals, minlength=len(win.nodes))
    elif t == 0.0:
        W = np.zeros(len(win.nodes))
    else:
        dens = ScaledRadiusDensity(radius, query.rho)
        W = _checked_node_integrals(query.mu, win, lambda v: weight.one_minus_laplace(t * v), dens, 1.0,
                                    mode, n_sub, rel_tol, "effective weight W")
    diag = kernel.diag(win.nodes)
    if isinstance(base, BandedOperator):
        eff = base.modified(W)
    else:
        eff = modify_spectral(base, W)
    return EffectiveOperator(W, diag, win.weights, eff)


def tensor_operator(query: LaplaceQuery, kernel, window, mark_rule: MarkRule) -> SpectralData:
    """Brute-force discretization of the modified marked kernel on (x, r, m) nodes."""
    X, w = window.nodes, window.weights
    R, pr = mark_rule.radii, mark_rule.radius_weights
    Mm, pm = mark_rule.masses, mark_rule.mass_weights
    nx, nr, nm = len(X), len(R), len(Mm)
    ix, ir, im = np.meshgrid(np.arange(nx), np.arange(nr), np.arange(nm), indexing="ij")
    ix, ir, im = ix.ravel(), ir.ravel(), im.ravel()
    qw = w[ix] * pr[ir] * pm[im]
    h = query.t * Mm[im] * query.mu.ball_mass(X[ix], R[ir])
    s = np.sqrt(qw * -np.expm1(-h))
    Kx = kernel(X, X)
    A = s[:, None] * Kx[np.ix_(ix, ix)] * s[None, :]
    return spectral_from_matrix(A, check=True)


# ---------------------------------------------------------------------------
# exact Laplace transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplaceResult:
    theta: float
    rho: float
    n_rho: float
    log_lt: float
    first_order: float
    remainder: float
    mean: float  # E[M_rho(mu)] of the discretized process
    log_det: float
    trace: float
    trace_quadrature: float
    tr2: float
    spectral_norm: float
    series_partial: float
    series_terms: int
    identity_residual: float
    trace_powers: tuple = field(default=())

    @property
    def value(self) -> float:
        return math.exp(self.log_lt)

    @property
    def remainder_bound(self) -> float:
        """sum_{k>=2} Tr2^(k/2) / k = -log(1 - sqrt Tr2) - sqrt Tr2."""
        s = math.sqrt(self.tr2)
        if s >= 1.0:
            return math.inf
        return -math.log1p(-s) - s

    @property
    def trace_identity_gap(self) -> float:
        return abs(self.trace - self.trace_quadrature) / max(1e-300, abs(self.trace_quadrature))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trace_powers"] = list(self.trace_powers)
        return d


def discretized_mean(query: LaplaceQuery, sampler: LocationSampler, radius, weight, mode="cells", n_sub=4,
                     rel_tol=1e-9) -> float:
    """E[M_rho(mu)] for the jittered finite process (or its node version)."""
    dens = ScaledRadiusDensity(radius, query.rho)
    win = sampler.window
    I = _checked_node_integrals(query.mu, win, lambda v: v, dens, 1.0, mode, n_sub, rel_tol, "mean")
    return weight.mean * float(np.sum(win.weights * sampler.kernel.diag(win.nodes) * I))


def exact_laplace_centered(query: LaplaceQuery, scaled, window, radius: RadiusLaw, weight: WeightLaw, *,
                           sampler: LocationSampler | None = None, mode: str = "cells", n_sub: int = 4,
                           n_powers: int = 8, rel_tol: float = 1e-9) -> LaplaceResult:
    """log E[exp(-theta (M_rho(mu) - E M_rho(mu)) / n)] for the discretized model."""
    sampler = _sampler_for(scaled, window, query.rho, sampler)
    if query.theta == 0.0:
        return LaplaceResult(0.0, query.rho, query.n_rho, 0.0, 0.0, 0.0,
                             discretized_mean(query, sampler, radius, weight, mode, n_sub, rel_tol),
                             0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0, tuple([0.0] * n_powers))
    eff = reduce_marked_operator(query, scaled, window, radius, weight, sampler=sampler, mode=mode,
                                 n_sub=n_sub, rel_tol=rel_tol)
    win = sampler.window
    dens = ScaledRadiusDensity(radius, query.rho)
    t = query.t
    psi_nodes = _checked_node_integrals(query.mu, win, lambda v: weight.psi_mean(t * v), dens, 2.0,
                                        mode, n_sub, rel_tol, "first-order term")
    first = float(np.sum(win.weights * eff.diag * psi_nodes))
    mean = discretized_mean(query, sampler, radius, weight, mode, n_sub, rel_tol)

    op = eff.operator
    if isinstance(op, BandedOperator):
        norm = op.spectral_norm()
        if norm >= 1.0:
            raise SpectralNormAtLeastOne(f"||K_eff|| = {norm} >= 1")
        log_det = op.log_det_I_minus()
        powers = op.trace_powers(n_powers)
        trace, tr2 = powers[0], powers[1]
        partial, n_terms = math.nan, 0
    else:
        fr = fredholm_log_det(op)
        norm = op.spectral_norm
        log_det = fr.log_det
        ev = op.eigenvalues
        powers = [float(np.sum(ev**k)) for k in range(1, n_powers + 1)]
        trace, tr2 = float(np.sum(ev)), powers[1]
        partial, n_terms = fr.partial_sum, fr.n_terms
    log_lt = t * mean + log_det
    remainder = log_det + trace
    residual = abs(log_lt - (first + remainder))
    return LaplaceResult(
        float(query.theta), float(query.rho), float(query.n_rho), float(log_lt), first, float(remainder),
        float(mean), float(log_det), float(trace), eff.trace_quadrature, float(tr2), float(norm),
        float(partial), int(n_terms), float(residual), tuple(powers),
    )


# ---------------------------------------------------------------------------
# trace bound and rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceBoundReport:
    tr2: float
    bound: float
    M: float
    C_K: float
    C_mu: float
    C_f: float
    mean_weight: float
    rate: float
    regime: str

    @property
    def holds(self) -> bool:
        return self.tr2 <= self.bound * (1 + 1e-12)


def kernel_l2_constant(sampler: LocationSampler) -> float:
    """C_K = sup_i sum_j w_j K_rho(x_i, x_j)^2 / lambda on the grid."""
    op = sampler.operator
    w = sampler.window.weights
    if isinstance(op, BandedOperator):
        B = op.band
        n = op.size
        rows = B[0] ** 2
        for k in range(1, B.shape[0]):
            v = B[k, : n - k] ** 2
            rows[: n - k] += v
            rows[k:] += v
    else:
        rows = np.sum(op.matrix**2, axis=1)
    return float(np.max(rows / w) / sampler.kernel.intensity)


def trace2_bound(query: LaplaceQuery, scaled, window, radius: RadiusLaw, weight: WeightLaw,
                 certificate: MabCertificate | None, *, sampler: LocationSampler | None = None,
                 tr2: float | None = None, mode: str = "cells", n_sub: int = 4) -> TraceBoundReport:
    """Tr(K_eff^2) against M theta^2 lambda rho^q / n^2.

    M = C_K C_mu C_f E[m]^2 with C_f = (E[R^(q/2)])^2 and C_mu from a
    certificate of int mu(B(x,r))^2 dx <= C_mu r^q.
    """
    if certificate is None:
        raise CertificateMissing("a second-moment certificate for mu is required")
    if certificate.alpha != 2.0:
        raise ValueError("the trace bound needs a certificate with alpha = 2")
    sampler = _sampler_for(scaled, window, query.rho, sampler)
    q = certificate.q
    if tr2 is None:
        if query.theta == 0.0:
            tr2 = 0.0
        else:
            eff = reduce_marked_operator(query, scaled, window, radius, weight, sampler=sampler,
                                         mode=mode, n_sub=n_sub)
            op = eff.operator
            tr2 = op.trace_square() if isinstance(op, BandedOperator) else float(np.sum(op.eigenvalues**2))
    C_K = kernel_l2_constant(sampler)
    C_f = radius.mean_power(q / 2.0) ** 2
    Em = weight.mean
    M = C_K * certificate.C_mu * C_f * Em**2
    lam = scaled.lam(query.rho)
    rate = lam * query.rho**q / query.n_rho**2
    return TraceBoundReport(float(tr2), M * query.theta**2 * rate, M, C_K, certificate.C_mu, C_f, Em,
                            rate, query.regime)


@dataclass(frozen=True)
class RateReport:
    rate: float
    bound: float
    regime: str


def regime_rate(regime: str, lambda_rho: float, rho: float, alpha: float, beta: float, q: float, d: int) -> RateReport:
    """lambda rho^q / n^2 and its regime bound.

    large: rho^(q - beta) (needs lambda rho^beta >= 1); intermediate:
    lambda rho^beta rho^(q - beta); small (q = 2d): lambda^((beta - 2d) / beta).
    """
    n = normalization(regime, lambda_rho, rho, alpha, beta, d).n
    rate = lambda_rho * rho**q / n**2
    if regime == "large":
        if lambda_rho * rho**beta < 1.0:
            raise RegimeParameterMismatch("large-balls bound needs lambda rho^beta >= 1")
        bound = rho ** (q - beta)
    elif regime == "intermediate":
        bound = lambda_rho * rho**beta * rho ** (q - beta)
    elif regime == "small":
        if q != 2 * d:
            raise RegimeParameterMismatch("small-balls rate uses q = 2d")
        bound = lambda_rho ** ((beta - 2 * d) / beta)
    else:
        raise RegimeParameterMismatch(f"unknown regime {regime!r}")
    if rate > bound * (1 + 1e-12):
        raise AssertionError(f"rate {rate} exceeds regime bound {bound}")
    return RateReport(float(rate), float(bound), regime)


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyRow:
    regime: str
    rho: float
    theta: float
    exact_log_lt: float
    first_order: float
    remainder: float
    limit_exponent: float
    gap: float
    tr2: float
    tr2_bound: float
    rate: float
    rate_bound: float
    result: LaplaceResult = field(repr=False, compare=False, default=None)
    lemma_holds: bool = True
    remainder_within_bound: bool = True
    trace_bound_holds: bool = True

    def csv_row(self):
        return [self.regime] + [repr(float(getattr(self, c))) for c in STUDY_COLUMNS[1:]]


def limit_exponent(limit, theta: float) -> float:
    if theta == 0.0:
        return 0.0
    return float(limit.log_laplace(theta))


def laplace_convergence_study(regime: str, mu: Measure, theta_grid, rho_grid, scaled, window, radius: RadiusLaw,
                              weight: WeightLaw, limit, *, certificate: MabCertificate | None = None,
                              window_for=None, mode: str = "cells", n_sub: int = 4, samplers=None):
    """Exact log-Laplace transforms along a rho grid next to the limit exponent.

    ``limit`` is a LimitMarginal (its ``log_laplace`` gives the exponent).
    ``window_for(rho)`` may return a refined window per rho.
    """
    rows = []
    for rho in rho_grid:
        win = window_for(rho) if window_for is not None else window
        sampler = samplers[rho] if samplers is not None else LocationSampler(scaled.at(rho), win)
        lam = scaled.lam(rho)
        q = certificate.q if certificate is not None else 2.0 * mu.d
        rr = regime_rate(regime, lam, rho, weight.alpha, radius.beta, q, mu.d)
        for th in theta_grid:
            query = LaplaceQuery.for_regime(th, mu, rho, regime, scaled, radius, weight)
            res = exact_laplace_centered(query, scaled, win, radius, weight, sampler=sampler, mode=mode, n_sub=n_sub)
            lim = limit_exponent(limit, th)
            if certificate is not None:
                tb = trace2_bound(query, scaled, win, radius, weight, certificate, sampler=sampler, tr2=res.tr2)
                bound, tb_ok = tb.bound, tb.holds
            else:
                bound, tb_ok = math.nan, True
            lemma = check_lemma_trace_powers_from_powers(res.trace_powers)
            rows.append(StudyRow(
                regime, float(rho), float(th), res.log_lt, res.first_order, res.remainder, lim,
                abs(res.log_lt - lim), res.tr2, bound, rr.rate, rr.bound, res, lemma,
                abs(res.remainder) <= res.remainder_bound + 1e-12, tb_ok,
            ))
    return rows


def check_lemma_trace_powers_from_powers(powers, tol: float = 1e-10) -> bool:
    """Tr(A^k) <= Tr(A^2)^(k/2) from a list [Tr A, Tr A^2, ...]."""
    if len(powers) < 2:
        return True
    tr2 = powers[1]
    return all(powers[k - 1] <= tr2 ** (k / 2) + tol for k in range(2, len(powers) + 1))


def study_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())
