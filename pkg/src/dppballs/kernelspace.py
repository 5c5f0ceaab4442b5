"""DPP kernels, their zoom-out families, and quadrature discretization.

A kernel is discretized on a window by the Nystrom construction

    A_ij = sqrt(w_i) K(x_i, x_j) sqrt(w_j)

so that the finite DPP with marginal kernel ``A`` on the quadrature nodes
approximates the continuum DPP restricted to the window. Spectral quantities
(traces of powers, Fredholm determinants, operator norms) are read off the
eigenvalues of ``A``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import (
    NegativeWeightFunction,
    NonPositiveWeight,
    OrderingViolated,
    SpectralNormAtLeastOne,
    SpectrumOutOfRange,
)

CLIP_TOL = 1e-10
SERIES_TAIL_TARGET = 1e-12
# |k(u)| < 1e-17 beyond this many scale units; used for band truncation
_GAUSSIAN_CUTOFF = float(np.sqrt(np.log(1e17)))

Array = NDArray[np.float64]


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    """Axis-aligned box with a tensor quadrature rule."""

    bounds: tuple[tuple[float, float], ...]
    nodes_per_axis: int
    quadrature_rule: str = "midpoint"

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if any(hi <= lo for lo, hi in bounds):
            raise ValueError(f"box must have positive side lengths: {bounds}")
        if self.nodes_per_axis < 1 or self.nodes_per_axis**self.d < 2:
            raise ValueError("need at least 2 quadrature nodes")
        if self.quadrature_rule not in ("midpoint", "gauss_legendre"):
            raise ValueError(f"unknown quadrature rule {self.quadrature_rule!r}")

    @classmethod
    def interval(cls, lo, hi, n, rule="midpoint"):
        return cls(((lo, hi),), n, rule)

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def lengths(self) -> Array:
        return np.array([hi - lo for lo, hi in self.bounds])

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def spacing(self) -> float:
        """Largest node spacing over the axes (midpoint cell width)."""
        return float(self.lengths.max() / self.nodes_per_axis)

    def _axis_rule(self, lo, hi):
        n = self.nodes_per_axis
        if self.quadrature_rule == "midpoint":
            h = (hi - lo) / n
            x = lo + h * (np.arange(n) + 0.5)
            w = np.full(n, h)
            edges = lo + h * np.arange(n + 1)
        else:
            t, wt = np.polynomial.legendre.leggauss(n)
            x = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
            w = 0.5 * (hi - lo) * wt
            # cumulative weights interlace with Gauss nodes
            edges = lo + np.concatenate([[0.0], np.cumsum(w)])
            edges[-1] = hi
        return x, w, edges

    @cached_property
    def _rules(self):
        return [self._axis_rule(lo, hi) for lo, hi in self.bounds]

    @cached_property
    def nodes(self) -> Array:
        grids = np.meshgrid(*[r[0] for r in self._rules], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def weights(self) -> Array:
        grids = np.meshgrid(*[r[1] for r in self._rules], indexing="ij")
        w = np.prod(np.stack([g.ravel() for g in grids], axis=1), axis=1)
        if np.any(w <= 0):
            raise NonPositiveWeight("quadrature produced a non-positive weight")
        return w

    @cached_property
    def cells(self) -> tuple[Array, Array]:
        """Lower and upper corners of the cell owning each node."""
        lo_axes = [r[2][:-1] for r in self._rules]
        hi_axes = [r[2][1:] for r in self._rules]
        lo = np.stack([g.ravel() for g in np.meshgrid(*lo_axes, indexing="ij")], axis=1)
        hi = np.stack([g.ravel() for g in np.meshgrid(*hi_axes, indexing="ij")], axis=1)
        return lo, hi

    def contains(self, X) -> NDArray[np.bool_]:
        X = np.atleast_2d(X)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.all((X >= lo) & (X <= hi), axis=1)

    def with_nodes(self, nodes_per_axis: int) -> "WindowSpec":
        return WindowSpec(self.bounds, int(nodes_per_axis), self.quadrature_rule)

    def refined_for(self, kernel: "StationaryKernel", per_length: float = 2.0) -> "WindowSpec":
        """Window with at least ``per_length`` nodes per kernel correlation length."""
        need = int(np.ceil(self.lengths.max() * per_length / kernel.correlation_length))
        return self.with_nodes(max(self.nodes_per_axis, need))

    def sub_nodes(self, n_sub: int) -> tuple[Array, Array]:
        """Gauss-Legendre sub-points of every cell, for in-cell averaging.

        Returns ``(points, fractions)`` with points shaped (N, n_sub**d, d)
        and fractions summing to one inside each cell.
        """
        lo, hi = self.cells
        if n_sub == 1:
            return self.nodes[:, None, :], np.ones((len(lo), 1))
        t, wt = np.polynomial.legendre.leggauss(n_sub)
        t = 0.5 * (t + 1.0)
        wt = 0.5 * wt
        tt = np.stack([g.ravel() for g in np.meshgrid(*([t] * self.d), indexing="ij")], axis=1)
        ww = np.prod(
            np.stack([g.ravel() for g in np.meshgrid(*([wt] * self.d), indexing="ij")], axis=1),
            axis=1,
        )
        pts = lo[:, None, :] + (hi - lo)[:, None, :] * tt[None, :, :]
        return pts, np.broadcast_to(ww, (len(lo), len(ww))).copy()


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _profile_gaussian(U: Array) -> Array:
    return np.exp(-np.sum(U * U, axis=-1))


def _profile_cosine(U: Array) -> Array:
    # autocorrelation of a cosine bump, hence positive definite
    a = np.abs(U)
    v = (1.0 - a) * np.cos(np.pi * a) + np.sin(np.pi * a) / np.pi
    v = np.where(a <= 1.0, v, 0.0)
    return np.prod(v, axis=-1)


_PROFILES = {
    "gaussian_stationary": (_profile_gaussian, lambda d: np.pi ** (d / 2), _GAUSSIAN_CUTOFF),
    "cosine_tapered": (_profile_cosine, lambda d: (8.0 / np.pi**2) ** d, 1.0),
}


@dataclass(frozen=True)
class Envelope:
    """Smooth multiplicative envelope a(x) in (0, 1].

    a(x) = floor + (1 - floor) * exp(-|x - center|^2 / width^2)
    """

    center: tuple[float, ...]
    width: float
    floor: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.floor <= 1.0) or self.width <= 0:
            raise ValueError("envelope needs 0 < floor <= 1 and width > 0")

    def __call__(self, X: Array) -> Array:
        X = np.atleast_2d(X)
        r2 = np.sum((X - np.asarray(self.center)) ** 2, axis=1)
        return self.floor + (1.0 - self.floor) * np.exp(-r2 / self.width**2)

    @property
    def sup(self) -> float:
        return 1.0


@dataclass(frozen=True)
class StationaryKernel:
    """K(x,y) = a(x) * lam * K0 * k(lam^(1/d) (x - y) / s) * a(y).

    ``intensity`` (lam) is 1 for a base kernel; zoom-out families produce
    copies with lam = lambda(rho).
    """

    d: int
    amplitude: float
    scale: float = 1.0
    profile: str = "gaussian_stationary"
    envelope: Envelope | None = None
    intensity: float = 1.0

    def __post_init__(self):
        if self.profile not in _PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.amplitude < 0 or self.scale <= 0 or self.intensity <= 0:
            raise ValueError("amplitude must be >= 0, scale and intensity > 0")
        if self.continuum_norm_bound >= 1.0:
            raise SpectrumOutOfRange(
                f"continuum spectral bound {self.continuum_norm_bound:.4g} >= 1; "
                "reduce amplitude or scale"
            )

    @property
    def continuum_norm_bound(self) -> float:
        """Sup of the Fourier transform of the stationary part (times sup a^2).

        Both profiles have nonnegative transforms, maximal at frequency 0.
        The bound does not depend on ``intensity``.
        """
        _, integral, _ = _PROFILES[self.profile]
        sup_a = 1.0 if self.envelope is None else self.envelope.sup
        return self.amplitude * self.scale**self.d * integral(self.d) * sup_a**2

    @property
    def correlation_length(self) -> float:
        return self.scale / self.intensity ** (1.0 / self.d)

    @property
    def cutoff_distance(self) -> float:
        """Distance beyond which K(x, y) is below 1e-17 relative (or exactly 0)."""
        return _PROFILES[self.profile][2] * self.correlation_length

    @property
    def sup_diag(self) -> float:
        sup_a = 1.0 if self.envelope is None else self.envelope.sup
        return self.intensity * self.amplitude * sup_a**2

    def with_intensity(self, lam: float) -> "StationaryKernel":
        return StationaryKernel(self.d, self.amplitude, self.scale, self.profile, self.envelope, float(lam))

    def _env(self, X):
        return np.ones(len(X)) if self.envelope is None else self.envelope(X)

    def __call__(self, X, Y) -> Array:
        X = np.atleast_2d(np.asarray(X, float))
        Y = np.atleast_2d(np.asarray(Y, float))
        prof = _PROFILES[self.profile][0]
        U = (X[:, None, :] - Y[None, :, :]) / self.correlation_length
        K = self.intensity * self.amplitude * prof(U)
        return self._env(X)[:, None] * K * self._env(Y)[None, :]

    def diag(self, X) -> Array:
        X = np.atleast_2d(np.asarray(X, float))
        return self.intensity * self.amplitude * self._env(X) ** 2


@dataclass(frozen=True)
class ModifiedKernel:
    """(x, y) -> sqrt(w(x)) K(x, y) sqrt(w(y))."""

    base: object
    weight_fn: Callable[[Array], Array]

    @property
    def d(self):
        return self.base.d

    def _w(self, X):
        w = np.asarray(self.weight_fn(np.atleast_2d(X)), float)
        if np.any(w < 0):
            raise NegativeWeightFunction("weight function takes negative values")
        return w

    def __call__(self, X, Y):
        sx, sy = np.sqrt(self._w(X)), np.sqrt(self._w(Y))
        return sx[:, None] * self.base(X, Y) * sy[None, :]

    def diag(self, X):
        return self._w(X) * self.base.diag(X)


def modify_kernel(kernel, weight_fn) -> ModifiedKernel:
    """Kernel of K[w]; ``weight_fn`` must be nonnegative wherever evaluated."""
    return ModifiedKernel(kernel, weight_fn)


@dataclass(frozen=True)
class ScaledKernelSpec:
    """Zoom-out family K_rho with lambda(rho) = prefactor * rho**(-eta).

    The prefactor defaults to 1; the intermediate regime with a != 1 uses
    prefactor a^(d - beta) and eta = beta, so lambda(rho) rho^beta is
    exactly a^(d - beta).
    """

    base: StationaryKernel
    eta: float
    prefactor: float = 1.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive so that lambda(rho) -> infinity")
        if self.prefactor <= 0:
            raise ValueError("prefactor must be positive")
        if self.base.intensity != 1.0:
            raise ValueError("base kernel must have unit intensity")

    def lam(self, rho: float) -> float:
        if not (0 < rho <= 1):
            raise ValueError(f"rho must lie in (0, 1], got {rho}")
        return float(self.prefactor * rho ** (-self.eta))

    def at(self, rho: float) -> StationaryKernel:
        return self.base.with_intensity(self.lam(rho))


# ---------------------------------------------------------------------------
# spectral data
# ---------------------------------------------------------------------------


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpectralData:
    nodes: Array
    weights: Array
    matrix: Array
    eigenvalues: Array  # descending
    eigenvectors: Array
    diag_quadrature: float = field(default=np.nan)

    @property
    def spectral_norm(self) -> float:
        return float(np.max(np.abs(self.eigenvalues))) if self.eigenvalues.size else 0.0

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    def check_invariants(self, tol_sym=1e-12, tol_trace=1e-8, tol_orth=1e-8) -> None:
        A = self.matrix
        if np.max(np.abs(A - A.T), initial=0.0) > tol_sym:
            raise AssertionError("matrix is not symmetric")
        ref = self.diag_quadrature if np.isfinite(self.diag_quadrature) else np.trace(A)
        if abs(self.trace - ref) / max(1.0, abs(ref)) > tol_trace:
            raise AssertionError(f"trace mismatch {self.trace} vs {ref}")
        V = self.eigenvectors
        G = V.T @ V - np.eye(V.shape[1])
        if np.max(np.abs(G), initial=0.0) > tol_orth:
            raise AssertionError("eigenvectors are not orthonormal")

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "eigenvalue"])
            for i, lam in enumerate(self.eigenvalues):
                w.writerow([i, repr(float(lam))])


def check_spectrum(evals: Array, clip_tol: float = CLIP_TOL) -> Array:
    """Enforce the DPP admissibility range [0, 1) with boundary clipping."""
    if evals.size and evals.min() < -clip_tol:
        raise SpectrumOutOfRange(f"eigenvalue {evals.min():.3e} < 0")
    if evals.size and evals.max() >= 1.0:
        raise SpectrumOutOfRange(f"eigenvalue {evals.max():.12f} >= 1")
    return np.clip(evals, 0.0, None)


def spectral_from_matrix(matrix, nodes=None, weights=None, *, check=True, diag_quadrature=np.nan) -> SpectralData:
    A = np.asarray(matrix, float)
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    if n == 0:
        evals, evecs = np.zeros(0), np.zeros((0, 0))
    else:
        evals, evecs = scipy.linalg.eigh(A)
        evals, evecs = evals[::-1], evecs[:, ::-1]
    if check:
        evals = check_spectrum(evals)
    if nodes is None:
        nodes = np.arange(n, dtype=float)[:, None]
    if weights is None:
        weights = np.ones(n)
    return SpectralData(
        _readonly(nodes), _readonly(weights), _readonly(A), _readonly(evals), _readonly(evecs),
        float(diag_quadrature),
    )


def kernel_matrix(kernel, window: WindowSpec) -> Array:
    X, w = window.nodes, window.weights
    sw = np.sqrt(w)
    return sw[:, None] * kernel(X, X) * sw[None, :]


def discretize(kernel, window: WindowSpec) -> SpectralData:
    """Nystrom discretization of ``kernel`` on ``window`` with eigendecomposition."""
    X, w = window.nodes, window.weights
    if np.any(w <= 0):
        raise NonPositiveWeight("non-positive quadrature weight")
    A = kernel_matrix(kernel, window)
    diag_q = float(np.sum(w * kernel.diag(X)))
    return spectral_from_matrix(A, X, w, diag_quadrature=diag_q)


def modify_spectral(spec: SpectralData, node_weights) -> SpectralData:
    """Discretization of K[w] reusing the matrix of K: D^1/2 A D^1/2."""
    v = np.asarray(node_weights, float)
    if np.any(v < 0):
        raise NegativeWeightFunction("weight function takes negative values")
    s = np.sqrt(v)
    A = s[:, None] * spec.matrix * s[None, :]
    return spectral_from_matrix(A, spec.nodes, spec.weights, diag_quadrature=float(np.sum(v * np.diag(spec.matrix))))


def trace_power(spec_or_evals, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    ev = spec_or_evals.eigenvalues if isinstance(spec_or_evals, SpectralData) else np.asarray(spec_or_evals)
    return float(np.sum(ev**n))


@dataclass(frozen=True)
class FredholmResult:
    log_det: float  # sum log(1 - lambda_i)
    partial_sum: float  # -sum_{n<=N} Tr(A^n)/n
    n_terms: int
    tail_bound: float

    @property
    def agreement(self) -> float:
        return abs(self.log_det - self.partial_sum)


def series_terms_needed(norm: float, tr1: float, tr2: float, target: float = SERIES_TAIL_TARGET) -> tuple[int, float]:
    """Smallest N whose trace-series tail is provably below ``target``.

    Tr(A^n) <= min(Tr(A^2)^(n/2), ||A||^(n-1) Tr(A)); both are geometric in n.
    """
    if tr1 <= 0 or norm <= 0:
        return 1, 0.0
    q = norm
    c = tr1 / norm
    s = np.sqrt(tr2)
    if s < q:
        q, c = s, 1.0
    # sum_{n>N} c q^n / n <= c q^(N+1) / ((N+1)(1-q))
    N = 1
    while True:
        bound = c * q ** (N + 1) / ((N + 1) * (1.0 - q))
        if bound < target:
            return N, float(bound)
        N += 1


def fredholm_log_det(spec_or_evals) -> FredholmResult:
    """log det(I - A) both from eigenvalues and from the truncated trace series."""
    ev = spec_or_evals.eigenvalues if isinstance(spec_or_evals, SpectralData) else np.asarray(spec_or_evals, float)
    ev = ev[ev != 0.0]
    if ev.size == 0:
        return FredholmResult(0.0, 0.0, 0, 0.0)
    norm = float(np.max(np.abs(ev)))
    if norm >= 1.0:
        raise SpectralNormAtLeastOne(f"spectral norm {norm} >= 1; trace series diverges")
    log_det = float(np.sum(np.log1p(-ev)))
    N, tail = series_terms_needed(norm, float(np.sum(np.abs(ev))), float(np.sum(ev**2)))
    # -sum_n sum_i ev_i^n / n, accumulated per eigenvalue
    partial = 0.0
    p = np.ones_like(ev)
    for n in range(1, N + 1):
        p = p * ev
        partial -= float(np.sum(p)) / n
    return FredholmResult(log_det, partial, N, tail)


# ---------------------------------------------------------------------------
# operator inequalities
# ---------------------------------------------------------------------------


def _node_values(fn, X):
    return np.asarray(fn(X) if callable(fn) else fn, float)


def check_norm_monotonicity(kernel_or_spec, f, g, window: WindowSpec | None = None) -> dict:
    """Compare ||K[f]|| and ||K[g]|| for 0 <= f <= g on the quadrature nodes."""
    if isinstance(kernel_or_spec, SpectralData):
        A, X = kernel_or_spec.matrix, kernel_or_spec.nodes
    else:
        A, X = kernel_matrix(kernel_or_spec, window), window.nodes
    fv, gv = _node_values(f, X), _node_values(g, X)
    if np.any(fv < 0) or np.any(gv < 0):
        raise NegativeWeightFunction("f and g must be nonnegative")
    if np.any(fv > gv):
        raise OrderingViolated("f > g at some quadrature node")

    def norm(v):
        s = np.sqrt(v)
        M = s[:, None] * A * s[None, :]
        return float(np.max(np.abs(scipy.linalg.eigvalsh(M))))

    nf, ng = norm(fv), norm(gv)
    return {"norm_f": nf, "norm_g": ng, "holds": nf <= ng + 1e-10}


def check_lemma_trace_powers(evals, n_max: int = 8, tol: float = 1e-10) -> dict:
    """Tr(A^n) <= Tr(A^2)^(n/2) for n = 2..n_max on a nonnegative spectrum."""
    ev = np.asarray(evals, float)
    tr2 = float(np.sum(ev**2))
    rows = []
    for n in range(2, n_max + 1):
        lhs = float(np.sum(ev**n))
        rhs = tr2 ** (n / 2)
        rows.append((n, lhs, rhs, lhs <= rhs + tol))
    return {"rows": rows, "holds": all(r[3] for r in rows)}


def uniform_l2_ratio(kernel: StationaryKernel, window: WindowSpec) -> tuple[float, Array]:
    """sup_i sum_j w_j K(x_i, x_j)^2 / intensity, plus the per-node values."""
    X, w = window.nodes, window.weights
    K = kernel(X, X)
    row = (K * K) @ w
    return float(row.max() / kernel.intensity), row / kernel.intensity


def check_uniform_l2_bound(scaled: ScaledKernelSpec, window: WindowSpec, rho_grid: Sequence[float],
                           per_length: float = 2.0, noise: float = 1e-3) -> dict:
    """Track sup_x int K_rho(x,y)^2 dy / lambda(rho) along a rho grid.

    The window is refined per rho so every grid resolves the kernel.
    """
    rows = []
    for rho in rho_grid:
        k = scaled.at(rho)
        win = window.refined_for(k, per_length)
        ratio, _ = uniform_l2_ratio(k, win)
        rows.append({"rho": float(rho), "lambda": scaled.lam(rho), "ratio": ratio, "nodes": win.nodes_per_axis})
    ratios = np.array([r["ratio"] for r in rows])
    finite = bool(np.all(np.isfinite(ratios)) and np.all(ratios > 0))
    # non-increasing in the order given, up to resolution noise
    trend = bool(np.all(np.diff(ratios) <= noise * ratios[:-1])) if len(ratios) > 1 else True
    return {
        "rows": rows,
        "bounded": finite and trend,
        "max_over_min": float(ratios.max() / ratios.min()) if finite else np.inf,
    }


def compactness_index(evals, tol: float = 1e-8) -> int:
    """First index at which the descending spectrum drops below ``tol`` (len if never)."""
    ev = np.asarray(evals)
    below = np.nonzero(ev < tol)[0]
    return int(below[0]) if below.size else len(ev)


# ---------------------------------------------------------------------------
# banded operators (d = 1, sorted nodes, short-range kernels)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandedOperator:
    """Symmetric banded matrix in LAPACK lower storage: band[k, i] = A[i+k, i].

    Large 1-D windows with short-range kernels are handled in this form:
    entries beyond the kernel cutoff distance are below 1e-17 relative and
    dropped.
    """

    nodes: Array
    weights: Array
    band: Array

    @property
    def size(self) -> int:
        return self.band.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.band.shape[0] - 1

    @property
    def trace(self) -> float:
        return float(np.sum(self.band[0]))

    @property
    def diagonal(self) -> Array:
        return self.band[0]

    def trace_square(self) -> float:
        return float(np.sum(self.band[0] ** 2) + 2.0 * np.sum(self.band[1:] ** 2))

    def modified(self, node_weights) -> "BandedOperator":
        v = np.asarray(node_weights, float)
        if np.any(v < 0):
            raise NegativeWeightFunction("weight function takes negative values")
        s = np.sqrt(v)
        out = self.band.copy()
        n = self.size
        for k in range(self.band.shape[0]):
            out[k, : n - k] *= s[: n - k] * s[k:]
        return BandedOperator(self.nodes, self.weights, out)

    def to_sparse(self):
        import scipy.sparse as sp

        n, b = self.size, self.bandwidth
        diags = [self.band[k, : n - k] for k in range(b + 1)]
        lower = sp.diags(diags, [-k for k in range(b + 1)], shape=(n, n), format="csr")
        upper = sp.diags(diags[1:], list(range(1, b + 1)), shape=(n, n), format="csr")
        return (lower + upper).tocsr()

    def log_det_I_minus(self) -> float:
        ab = -self.band.copy()
        ab[0] += 1.0
        try:
            L = scipy.linalg.cholesky_banded(ab, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SpectralNormAtLeastOne("I - A is not positive definite") from exc
        return float(2.0 * np.sum(np.log(L[0])))

    def trace_powers(self, n_max: int) -> list[float]:
        """[Tr(A), Tr(A^2), ..., Tr(A^n_max)] by sparse products."""
        A = self.to_sparse()
        out = [self.trace]
        P = A
        for _ in range(2, n_max + 1):
            P = (P @ A).tocsr()
            out.append(float(P.diagonal().sum()))
        return out

    def spectral_norm(self) -> float:
        if self.size < 3:
            return float(np.max(np.abs(scipy.linalg.eigvalsh(self.to_sparse().toarray()))))
        from scipy.sparse.linalg import eigsh

        val = eigsh(self.to_sparse(), k=1, which="LA", return_eigenvectors=False, tol=1e-10)
        return float(val[0])


def kernel_band(kernel: StationaryKernel, window: WindowSpec) -> BandedOperator:
    """Banded Nystrom matrix of a 1-D short-range kernel on a midpoint window."""
    if window.d != 1 or window.quadrature_rule != "midpoint":
        raise ValueError("banded discretization needs a 1-D midpoint window")
    X, w = window.nodes, window.weights
    n = len(X)
    h = window.spacing
    b = min(n - 1, int(np.ceil(kernel.cutoff_distance / h)))
    sw = np.sqrt(w)
    band = np.zeros((b + 1, n))
    for k in range(b + 1):
        if n - k <= 0:
            break
        band[k, : n - k] = sw[: n - k] * sw[k:] * _pair_values(kernel, X[: n - k], X[k:])
    return BandedOperator(_readonly(X), _readonly(w), band)


def _pair_values(kernel: StationaryKernel, X: Array, Y: Array) -> Array:
    """K(x_i, y_i) elementwise."""
    prof = _PROFILES[kernel.profile][0]
    U = (X - Y) / kernel.correlation_length
    v = kernel.intensity * kernel.amplitude * prof(U)
    if kernel.envelope is not None:
        v = v * kernel.envelope(X) * kernel.envelope(Y)
    return v
