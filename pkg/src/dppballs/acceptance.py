"""Acceptance suite: eleven numbered checks, each returning (passed, detail).

``run_acceptance`` runs a selection and returns one ``CriterionResult`` per
check; ``selftest`` on the command line prints one line per result.
Criteria 8 and 9 run full Monte Carlo regime studies and take minutes.
"""
from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from .dpp_engine import LocationSampler, replicate_rng
from .errors import SpectrumOutOfRange
from .fields import BoxMeasure, IntervalMeasure
from .harness import (
    StudyConfig,
    build_sampler,
    empirical_laplace,
    laplace_gap_check,
    load_preset,
    run_laplace,
    run_study,
    simulate_fields,
)
from .kernelspace import (
    StationaryKernel,
    WindowSpec,
    check_lemma_trace_powers,
    check_norm_monotonicity,
    discretize,
    modify_spectral,
)
from .laplace_lab import (
    LaplaceQuery,
    MarkRule,
    check_lemma_trace_powers_from_powers,
    exact_laplace_centered,
    reduce_marked_operator,
    tensor_operator,
)
from .marks import sigma_gamma

ACCEPTANCE_SEED = 20240610


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


_memo: dict = {}


def _memoized(key, fn):
    if key not in _memo:
        _memo[key] = fn()
    return _memo[key]


def _with_laplace_role(config: StudyConfig, rho_grid) -> StudyConfig:
    raw = config.to_dict()
    raw["measures"] = [dict(m, role="laplace") for m in raw["measures"]]
    raw["regime"]["rho_grid"] = list(rho_grid)
    raw["laplace"]["enabled"] = True
    return StudyConfig.from_dict(raw)


# Laplace studies shared by criteria 4, 5 and 7. The large and small grids
# stop before the Monte Carlo grids do: node counts grow like lambda(rho).
LAPLACE_STUDIES = {
    "intermediate": ("intermediate_laplace", None),
    "large": ("large", (0.1, 0.03, 0.01)),
    "small": ("small", (1e-3, 1e-5)),
}


def _laplace_study(regime: str):
    preset, grid = LAPLACE_STUDIES[regime]

    def build():
        cfg = load_preset(preset)
        if grid is not None:
            cfg = _with_laplace_role(cfg, grid)
        return cfg, run_laplace(cfg)

    return _memoized(("laplace", regime), build)


# ---------------------------------------------------------------------------
# 1: trace identity against an adaptive-quadrature oracle
# ---------------------------------------------------------------------------


def _oracle_radial(x: float, mu, t: float, rho: float, radius, weight) -> float:
    """int (1 - E exp(-t m mu(B(x, r)))) f_rho(r) dr by scipy quad, 1-D only."""
    lo, hi = (float(v[0]) for v in mu.support_box())
    near = 0.0 if lo <= x <= hi else min(abs(x - lo), abs(x - hi))
    far = max(abs(x - lo), abs(x - hi))
    start = rho * radius.support_start
    H = lambda r: float(weight.one_minus_laplace(t * mu.ball_mass(np.array([[x]]), np.array([r]))[0]))
    pdf = lambda r: float(radius.pdf(r / rho)) / rho
    tail = float(weight.one_minus_laplace(t * mu.total_mass)) * float(radius.sf(max(far, start) / rho))
    if far <= start:
        return tail
    knots = sorted({k for k in (near, abs(x - lo), abs(x - hi), abs(x - 0.5 * (lo + hi))) if start < k < far})
    val, _ = integrate.quad(lambda r: H(r) * pdf(r), start, far, points=knots or None,
                            epsabs=0.0, epsrel=1e-12, limit=400)
    return val + tail


def _trace_identity_case(preset: str, rho: float, theta: float) -> float:
    cfg = load_preset(preset)
    mu = cfg.measures[0].measure
    radius, weight = cfg.radius_law, cfg.weight_law
    sampler = build_sampler(cfg, rho)
    query = LaplaceQuery.for_regime(theta, mu, rho, cfg.regime, cfg.scaled, radius, weight)
    eff = reduce_marked_operator(query, cfg.scaled, sampler.window, radius, weight, sampler=sampler,
                                 mode="cells", n_sub=cfg.laplace_n_sub)
    win = sampler.window
    pts, frac = win.sub_nodes(cfg.laplace_n_sub)
    W = np.array([sum(f * _oracle_radial(float(p[0]), mu, query.t, rho, radius, weight)
                      for p, f in zip(cell, fr)) for cell, fr in zip(pts, frac)])
    oracle = float(np.sum(win.weights * sampler.kernel.diag(win.nodes) * W))
    return abs(eff.trace - oracle) / abs(oracle)


def criterion_trace_identity(threads: int = 1) -> tuple[bool, str]:
    cases = [("intermediate_laplace", 0.2, th) for th in (0.5, 1.0, 2.0)]
    cases += [("large", 0.1, 1.0), ("small", 1e-3, 1.0)]
    gaps = [_trace_identity_case(*c) for c in cases]
    worst = max(gaps)
    return worst < 1e-8, f"max relative gap {worst:.2e} over {len(gaps)} queries (tol 1e-8)"


# ---------------------------------------------------------------------------
# 2: Fredholm determinant against Monte Carlo
# ---------------------------------------------------------------------------


def criterion_fredholm_vs_mc(threads: int = 1, replicates: int = 100_000) -> tuple[bool, str]:
    cfg = load_preset("smoke")
    raw = cfg.to_dict()
    raw["regime"]["rho_grid"] = [0.5, 0.25]
    raw["mc"]["replicates"] = replicates
    raw["mc"]["seed"] = ACCEPTANCE_SEED
    raw["mc"]["theta_grid"] = [0.5, 1.0, 2.0]
    cfg = StudyConfig.from_dict(raw)
    radius, weight = cfg.radius_law, cfg.weight_law
    mus = [m.measure for m in cfg.measures]
    worst, parts = 0.0, []
    for i, rho in enumerate(cfg.rho_grid):
        sampler = build_sampler(cfg, rho)
        ens = simulate_fields(cfg, i, sampler, mus, threads=threads)
        for j, (entry, mu) in enumerate(zip(cfg.measures, mus)):
            for th in cfg.theta_grid:
                query = LaplaceQuery.for_regime(th, mu, rho, cfg.regime, cfg.scaled, radius, weight)
                res = exact_laplace_centered(query, cfg.scaled, sampler.window, radius, weight, sampler=sampler,
                                             mode="cells", n_sub=cfg.laplace_n_sub)
                emp = empirical_laplace((ens.values[:, j] - res.mean) / query.n_rho, th)
                z = abs(emp.value - math.exp(res.log_lt)) / emp.se
                worst = max(worst, z)
                parts.append(f"{entry.name}@{rho:g}/{th:g}:{z:.2f}")
    return worst <= 3.0, f"max |exact - empirical| / SE = {worst:.2f} (N={replicates}); " + " ".join(parts)


def _random_kernel(rng: np.random.Generator, d: int, norm_range=(0.05, 0.9), profile="gaussian_stationary",
                   intensity=(1.0, 3.0)) -> StationaryKernel:
    """Kernel whose continuum spectral bound is drawn from ``norm_range``."""
    scale = float(rng.uniform(0.3, 2.0))
    unit = StationaryKernel(d, 1e-6, scale, profile).continuum_norm_bound / 1e-6
    return StationaryKernel(d, float(rng.uniform(*norm_range)) / unit, scale, profile,
                            intensity=float(rng.uniform(*intensity)))


# ---------------------------------------------------------------------------
# 3: dimensional reduction against the tensor discretization
# ---------------------------------------------------------------------------


def _admissible(draw, rng: np.random.Generator, tries: int = 100):
    """Redraw until the discretized kernel has its spectrum in [0, 1)."""
    for _ in range(tries):
        try:
            return draw(rng)
        except SpectrumOutOfRange:
            continue
    raise SpectrumOutOfRange(f"no admissible draw in {tries} tries")


def _reduction_setup(rng: np.random.Generator):
    d = int(rng.integers(1, 3))
    if d == 1:
        nx = int(rng.integers(2, 5))
        window = WindowSpec(((-1.5, 1.5),), nx, str(rng.choice(["midpoint", "gauss_legendre"])))
        mu = IntervalMeasure(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.2, 1.0)),
                             float(rng.uniform(0.5, 2.0)))
    else:
        window = WindowSpec(((-1.0, 1.0), (-1.0, 1.0)), 2)
        c = rng.uniform(-0.3, 0.3, 2)
        h = rng.uniform(0.2, 0.8, 2)
        mu = BoxMeasure(tuple(c - h), tuple(c + h), float(rng.uniform(0.5, 2.0)))
    kernel = _random_kernel(rng, d)
    return window, mu, kernel, LocationSampler(kernel, window, method="hkpv")


def _random_reduction_case(rng: np.random.Generator) -> float:
    window, mu, kernel, sampler = _admissible(_reduction_setup, rng)
    nr = int(rng.integers(2, 5))
    nm = int(rng.integers(2, 5))
    rule = MarkRule(rng.uniform(0.05, 2.0, nr), rng.dirichlet(np.ones(nr)),
                    rng.uniform(0.1, 3.0, nm), rng.dirichlet(np.ones(nm)))
    query = LaplaceQuery(float(rng.uniform(0.2, 3.0)), mu, 1.0)
    eff = reduce_marked_operator(query, None, window, None, None, sampler=sampler, mode="nodes", mark_rule=rule)
    small = np.sort(eff.operator.eigenvalues)[::-1]
    big = np.sort(tensor_operator(query, kernel, window, rule).eigenvalues)[::-1]
    k = len(small)
    return float(max(np.max(np.abs(big[:k] - small)), np.max(np.abs(big[k:]), initial=0.0)))


def criterion_dimensional_reduction(threads: int = 1, draws: int = 10) -> tuple[bool, str]:
    rng = replicate_rng(ACCEPTANCE_SEED, 3)
    gaps = [_random_reduction_case(rng) for _ in range(draws)]
    worst = max(gaps)
    return worst < 1e-10, f"max spectral gap {worst:.2e} over {draws} random draws (tol 1e-10)"


# ---------------------------------------------------------------------------
# 4: trace powers
# ---------------------------------------------------------------------------


def _random_discretization(rng: np.random.Generator):
    d = int(rng.integers(1, 3))
    n = int(rng.integers(3, 40 if d == 1 else 8))
    window = WindowSpec(tuple((-float(rng.uniform(0.5, 3.0)), float(rng.uniform(0.5, 3.0))) for _ in range(d)), n,
                        str(rng.choice(["midpoint", "gauss_legendre"])))
    profile = str(rng.choice(["gaussian_stationary", "cosine_tapered"]))
    kernel = _random_kernel(rng, d, profile=profile, intensity=(0.5, 4.0))
    return discretize(kernel, window)


def _random_admissible_spectrum(rng: np.random.Generator) -> np.ndarray:
    spec = _admissible(_random_discretization, rng)
    return modify_spectral(spec, rng.uniform(0.0, 1.0, spec.size)).eigenvalues


def criterion_trace_powers(threads: int = 1, operators: int = 100) -> tuple[bool, str]:
    rng = replicate_rng(ACCEPTANCE_SEED, 4)
    bad = sum(not check_lemma_trace_powers(_random_admissible_spectrum(rng), 8, 1e-10)["holds"]
              for _ in range(operators))
    study_ops = 0
    for regime in LAPLACE_STUDIES:
        _, tables = _laplace_study(regime)
        for rows in tables.values():
            for r in rows:
                study_ops += 1
                bad += not check_lemma_trace_powers_from_powers(r.result.trace_powers, 1e-10)
    return bad == 0, f"{bad} violations over {operators} random and {study_ops} study operators, n = 2..8"


# ---------------------------------------------------------------------------
# 5: trace bound and regime rates
# ---------------------------------------------------------------------------


def independent_rate(regime: str, lam: float, rho: float, alpha: float, beta: float, q: float, d: int):
    """(lambda rho^q / n^2, regime bound) written out per regime."""
    if regime == "large":
        n = (lam * rho**beta) ** (1.0 / alpha)
        return lam * rho**q / n**2, rho ** (q - beta)
    if regime == "intermediate":
        return lam * rho**q, lam * rho**beta * rho ** (q - beta)
    gamma = beta / d
    n = (lam * rho**beta) ** (1.0 / gamma)
    return lam * rho ** (2 * d) / n**2, lam ** ((beta - 2 * d) / beta)


def criterion_trace_bound(threads: int = 1) -> tuple[bool, str]:
    ok, points, worst_rate, worst_ratio = True, 0, 0.0, 0.0
    for regime in LAPLACE_STUDIES:
        cfg, tables = _laplace_study(regime)
        q = 2.0 * cfg.d
        for rows in tables.values():
            for r in rows:
                points += 1
                beta = cfg.radius["beta"]
                pref = cfg.a ** (cfg.d - beta) if regime == "intermediate" else 1.0
                lam = pref * r.rho ** (-cfg.eta)
                rate, bound = independent_rate(regime, lam, r.rho, cfg.weight_law.alpha, beta, q, cfg.d)
                err = max(abs(r.rate - rate) / rate, abs(r.rate_bound - bound) / bound)
                worst_rate = max(worst_rate, err)
                ok &= bool(np.isfinite(r.tr2_bound)) and r.trace_bound_holds and err < 1e-12 and rate <= bound * (1 + 1e-12)
                if r.tr2_bound > 0:
                    worst_ratio = max(worst_ratio, r.tr2 / r.tr2_bound)
    return ok, (f"{points} grid points; max Tr2/bound {worst_ratio:.3g}; "
                f"max rate arithmetic gap {worst_rate:.1e} (tol 1e-12)")


# ---------------------------------------------------------------------------
# 6: norm monotonicity
# ---------------------------------------------------------------------------


def criterion_norm_monotonicity(threads: int = 1, pairs: int = 200) -> tuple[bool, str]:
    rng = replicate_rng(ACCEPTANCE_SEED, 6)
    bad = 0
    for _ in range(pairs):
        n = int(rng.integers(3, 60))
        window = WindowSpec.interval(-float(rng.uniform(0.5, 4.0)), float(rng.uniform(0.5, 4.0)), n)
        kernel = _random_kernel(rng, 1, intensity=(0.5, 5.0))
        g = rng.uniform(0.0, 1.0, n)
        f = rng.uniform(0.0, 1.0, n) * g
        bad += not check_norm_monotonicity(kernel, f, g, window)["holds"]
    return bad == 0, f"{bad} violations over {pairs} random pairs f <= g (tol 1e-10)"


# ---------------------------------------------------------------------------
# 7: intermediate regime, deterministic convergence
# ---------------------------------------------------------------------------


def criterion_intermediate_laplace(threads: int = 1) -> tuple[bool, str]:
    cfg, tables = _laplace_study("intermediate")
    ok, details = True, []
    for name, rows in tables.items():
        good, detail = laplace_gap_check(rows, 0.05)
        ok &= good
        details.append(f"{name}: relative gaps {detail}")
    grid = ", ".join(f"{r:g}" for r in cfg.rho_grid)
    return ok and bool(tables), f"rho grid [{grid}]; " + "; ".join(details)


# ---------------------------------------------------------------------------
# 8 and 9: large and small regimes, distributional convergence
# ---------------------------------------------------------------------------


def _ks_study(preset: str, threads: int):
    return _memoized(("study", preset), lambda: run_study(load_preset(preset), threads=threads, laplace=False))


def _ks_summary(report, threshold: float = 0.05) -> tuple[bool, str]:
    if report.partial:
        return False, f"study aborted: {report.error}"
    ok, parts = True, []
    for name in report.fields:
        ks = [r["ks"] for r in report.rows if r["measure"] == name]
        ok &= ks[-1] < threshold and all(b < a for a, b in zip(ks, ks[1:]))
        parts.append(f"{name}: KS " + ", ".join(f"{v:.4f}" for v in ks))
    return ok and bool(parts), "; ".join(parts) + f" (N={report.config.replicates}, threshold {threshold})"


def criterion_large_regime(threads: int = 1) -> tuple[bool, str]:
    report = _ks_study("large", threads)
    ok, detail = _ks_summary(report)
    return ok, f"alpha={report.config.weight_law.alpha}; " + detail


def criterion_small_regime(threads: int = 1) -> tuple[bool, str]:
    report = _ks_study("small", threads)
    ok, detail = _ks_summary(report)
    cfg = report.config
    cross = sigma_gamma(cfg.radius_law, cfg.weight_law, cfg.radius["beta"] / cfg.d, cfg.d).cross_check_gap
    return ok and cross < 1e-8, f"{detail}; sigma_gamma quadrature vs closed form {cross:.1e} (tol 1e-8)"


# ---------------------------------------------------------------------------
# 10: DPP sampler counts
# ---------------------------------------------------------------------------


def _count_statistics(sampler: LocationSampler, N: int, stream: int) -> tuple[bool, str]:
    counts = np.array([len(sampler.sample(replicate_rng(ACCEPTANCE_SEED, 10, stream, k))) for k in range(N)],
                      float)
    op = sampler.operator
    tr1 = float(op.trace)
    tr2 = float(op.trace_square()) if hasattr(op, "trace_square") else float(np.sum(op.eigenvalues**2))
    mean = counts.mean()
    var = counts.var(ddof=1)
    m4 = float(np.mean((counts - mean) ** 4))
    se_mean = math.sqrt(var / N)
    se_var = math.sqrt(max(m4 - var**2, 0.0) / N)
    z_mean = abs(mean - tr1) / se_mean
    z_var = abs(var - (tr1 - tr2)) / se_var
    z_sub = (mean - var) / math.hypot(se_mean, se_var)
    ok = z_mean <= 3 and z_var <= 3 and z_sub >= 3
    return ok, (f"{sampler.method} ({len(sampler.window.nodes)} nodes): mean {mean:.3f} vs {tr1:.3f} "
                f"({z_mean:.2f} SE), var {var:.3f} vs {tr1 - tr2:.3f} ({z_var:.2f} SE), "
                f"sub-Poisson by {z_sub:.1f} SE")


def criterion_sampler_counts(threads: int = 1, N: int = 10_000) -> tuple[bool, str]:
    kernel = StationaryKernel(1, 0.5, 1.0, intensity=3.0)
    dense = LocationSampler(kernel, WindowSpec.interval(-3.0, 3.0, 60), method="hkpv")
    band = LocationSampler(kernel, WindowSpec.interval(-10.0, 10.0, 600), method="banded")
    results = [_count_statistics(dense, N, 0), _count_statistics(band, N, 1)]
    return all(ok for ok, _ in results), "; ".join(d for _, d in results)


# ---------------------------------------------------------------------------
# 11: reproducibility
# ---------------------------------------------------------------------------


def criterion_reproducibility(threads: int = 1) -> tuple[bool, str]:
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        dirs = [Path(tmp) / "a", Path(tmp) / "b"]
        codes = [main(["study", "preset:smoke", "--out-dir", str(d), "--threads", str(threads)]) for d in dirs]
        names = sorted(p.name for p in dirs[0].iterdir())
        other = sorted(p.name for p in dirs[1].iterdir())
        _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        ok = codes == [0, 0] and names == other and not mismatch and not errors and bool(names)
        return ok, f"{len(names)} files compared, {len(mismatch) + len(errors)} differ; exit codes {codes}"


CRITERIA = {
    1: ("trace identity", criterion_trace_identity),
    2: ("Fredholm vs Monte Carlo", criterion_fredholm_vs_mc),
    3: ("dimensional reduction", criterion_dimensional_reduction),
    4: ("trace powers", criterion_trace_powers),
    5: ("trace bound and rates", criterion_trace_bound),
    6: ("norm monotonicity", criterion_norm_monotonicity),
    7: ("intermediate Laplace convergence", criterion_intermediate_laplace),
    8: ("large-balls KS", criterion_large_regime),
    9: ("small-balls KS", criterion_small_regime),
    10: ("DPP count statistics", criterion_sampler_counts),
    11: ("reproducibility", criterion_reproducibility),
}


def run_criterion(number: int, threads: int = 1) -> CriterionResult:
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        ok, detail = fn(threads)
    except Exception as exc:  # a crash is a failure of that criterion, not of the suite
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CriterionResult(number, name, bool(ok), detail, time.perf_counter() - t0)


def run_acceptance(numbers=None, threads: int = 1, echo=None) -> list[CriterionResult]:
    results = []
    for k in numbers or sorted(CRITERIA):
        res = run_criterion(k, threads)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
