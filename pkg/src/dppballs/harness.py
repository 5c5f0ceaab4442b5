"""Study configuration, orchestration, statistics and persistence.

A study is described by one JSON document (see ``StudyConfig.from_dict``
for the schema). ``run_study`` simulates the normalized centered field on
every rho of the grid, compares it with the limit marginal (KS and
characteristic-function distances), optionally adds the exact Laplace
table, and returns a ``StudyReport``. Every number in the outputs is a
deterministic function of the configuration and the master seed.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from .dpp_engine import LocationSampler, configurations_to_csv, replicate_rng, sample_marked
from .errors import (
    CertificateFailed,
    ConfigInvalid,
    DPPBallsError,
    EmptySample,
    NumericError,
    SpectrumOutOfRange,
    TruncationBudgetExceeded,
)
from .fields import (
    field_expectation,
    field_samples,
    field_samples_to_csv,
    field_value,
    measure_from_dict,
    normalization,
    verify_mab,
)
from .kernelspace import Envelope, ScaledKernelSpec, StationaryKernel, WindowSpec
from .laplace_lab import laplace_convergence_study, study_to_csv
from .limits import (
    LimitMarginal,
    intermediate_marginal,
    sample_poisson_field,
    stable_marginal_large,
    stable_marginal_small,
)
from .marks import RadiusLaw, WeightLaw, sigma_gamma

REGIMES = ("large", "intermediate", "small")
ROLES = ("ks", "laplace", "both")
PRESETS = ("smoke", "large", "intermediate", "intermediate_laplace", "small")
_MISSING = object()


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _get(block: dict, key: str, path: str, default=_MISSING):
    if not isinstance(block, dict):
        raise ConfigInvalid(path, "expected an object")
    if key in block:
        return block[key]
    if default is _MISSING:
        raise ConfigInvalid(f"{path}.{key}", "missing required field")
    return default


def _number(value, path: str, *, integer: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(path, f"expected a number, got {value!r}")
    if integer and (not isinstance(value, int) and not float(value).is_integer()):
        raise ConfigInvalid(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigInvalid(path, "must be finite")
    return int(value) if integer else float(value)


def _choice(value, options, path: str) -> str:
    if value not in options:
        raise ConfigInvalid(path, f"must be one of {list(options)}, got {value!r}")
    return value


def _number_list(value, path: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigInvalid(path, "expected a nonempty list of numbers")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


@dataclass(frozen=True)
class MeasureEntry:
    name: str
    role: str
    spec: dict
    p: float | None = None
    q: float | None = None

    @property
    def measure(self):
        return measure_from_dict(self.spec)

    def certificate_exponents(self, alpha: float, d: int) -> tuple[float, float]:
        # I(r) ~ r^(alpha d) near 0 and ~ r^d at infinity for compactly supported mu
        p = self.p if self.p is not None else float(d)
        q = self.q if self.q is not None else alpha * d
        return p, q


@dataclass(frozen=True)
class StudyConfig:
    """Validated study description.

    Blocks: ``model`` (d, kernel, eta, window, per_length, sampler),
    ``marks`` (radius, weight), ``measures`` (list of named test measures
    with roles ks / laplace / both), ``regime`` (target, rho_grid, a),
    ``mc`` (replicates, seed, theta_grid, t_grid, ks_threshold, centering,
    poisson_budget), ``laplace`` (enabled, mode, n_sub) and ``output``
    (directory, formats).
    """

    d: int
    kernel: dict
    eta: float
    window: dict
    per_length: float
    sampler: str
    radius: dict
    weight: dict
    measures: tuple[MeasureEntry, ...]
    regime: str
    rho_grid: tuple[float, ...]
    a: float
    replicates: int
    seed: int
    theta_grid: tuple[float, ...]
    t_grid: tuple[float, ...]
    ks_threshold: float
    centering: str
    poisson_budget: float
    laplace_enabled: bool
    laplace_mode: str
    laplace_n_sub: int
    out_dir: str
    formats: tuple[str, ...]

    # -- loading ------------------------------------------------------------

    @classmethod
    def load(cls, path) -> "StudyConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(str(path), f"not valid JSON: {exc}") from None
        except OSError as exc:
            raise ConfigInvalid(str(path), f"cannot read: {exc.strerror}") from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "StudyConfig":
        if not isinstance(raw, dict):
            raise ConfigInvalid("$", "config must be a JSON object")
        model = _get(raw, "model", "$")
        marks = _get(raw, "marks", "$")
        regime = _get(raw, "regime", "$")
        mc = _get(raw, "mc", "$")
        lap = _get(raw, "laplace", "$", {})
        out = _get(raw, "output", "$", {})

        d = _number(_get(model, "d", "model"), "model.d", integer=True)
        if d not in (1, 2):
            raise ConfigInvalid("model.d", f"dimension must be 1 or 2, got {d}")

        kernel = _get(model, "kernel", "model")
        k = {
            "profile": _choice(_get(kernel, "profile", "model.kernel", "gaussian_stationary"),
                               ("gaussian_stationary", "cosine_tapered"), "model.kernel.profile"),
            "amplitude": _number(_get(kernel, "amplitude", "model.kernel"), "model.kernel.amplitude"),
            "scale": _number(_get(kernel, "scale", "model.kernel", 1.0), "model.kernel.scale"),
            "envelope": _get(kernel, "envelope", "model.kernel", None),
        }
        if k["amplitude"] < 0:
            raise ConfigInvalid("model.kernel.amplitude", "must be nonnegative")
        if k["scale"] <= 0:
            raise ConfigInvalid("model.kernel.scale", "must be positive")
        if k["envelope"] is not None:
            env = k["envelope"]
            center = _number_list(_get(env, "center", "model.kernel.envelope"), "model.kernel.envelope.center")
            if len(center) != d:
                raise ConfigInvalid("model.kernel.envelope.center", f"needs {d} coordinates")
            width = _number(_get(env, "width", "model.kernel.envelope"), "model.kernel.envelope.width")
            floor = _number(_get(env, "floor", "model.kernel.envelope", 0.5), "model.kernel.envelope.floor")
            if width <= 0:
                raise ConfigInvalid("model.kernel.envelope.width", "must be positive")
            if not 0 < floor <= 1:
                raise ConfigInvalid("model.kernel.envelope.floor", "must lie in (0, 1]")
            k["envelope"] = {"center": list(center), "width": width, "floor": floor}
        base = _make_kernel(d, k)
        if base.continuum_norm_bound >= 1.0:
            raise ConfigInvalid(
                "model.kernel.amplitude",
                f"spectrum must lie in [0, 1): continuum bound {base.continuum_norm_bound:.6g} >= 1",
            )

        eta = _number(_get(model, "eta", "model"), "model.eta")
        if eta <= 0:
            raise ConfigInvalid("model.eta", "must be positive")

        win = _get(model, "window", "model")
        bounds = _get(win, "bounds", "model.window")
        if not isinstance(bounds, list) or len(bounds) != d:
            raise ConfigInvalid("model.window.bounds", f"needs one [lo, hi] pair per axis ({d})")
        bb = []
        for i, pair in enumerate(bounds):
            if not isinstance(pair, list) or len(pair) != 2:
                raise ConfigInvalid(f"model.window.bounds[{i}]", "expected [lo, hi]")
            lo, hi = _number_list(pair, f"model.window.bounds[{i}]")
            if hi <= lo:
                raise ConfigInvalid(f"model.window.bounds[{i}]", "box must have positive side lengths")
            bb.append([lo, hi])
        npa = _number(_get(win, "nodes_per_axis", "model.window", 2), "model.window.nodes_per_axis", integer=True)
        if npa < 1 or npa**d < 2:
            raise ConfigInvalid("model.window.nodes_per_axis", "total node count must be at least 2")
        rule = _choice(_get(win, "quadrature_rule", "model.window", "midpoint"), ("midpoint", "gauss_legendre"),
                       "model.window.quadrature_rule")
        window = {"bounds": bb, "nodes_per_axis": npa, "quadrature_rule": rule}
        per_length = _number(_get(model, "per_length", "model", 2.0), "model.per_length")
        if per_length <= 0:
            raise ConfigInvalid("model.per_length", "must be positive")
        sampler = _choice(_get(model, "sampler", "model", "auto"), ("auto", "hkpv", "banded"), "model.sampler")
        if sampler == "banded" and (d != 1 or rule != "midpoint"):
            raise ConfigInvalid("model.sampler", "the banded sampler needs a 1-D midpoint window")

        rad = _get(marks, "radius", "marks")
        beta = _number(_get(rad, "beta", "marks.radius"), "marks.radius.beta")
        if not d < beta < 2 * d:
            raise ConfigInvalid("marks.radius.beta", f"need d < beta < 2d, got beta={beta} with d={d}")
        radius = {
            "beta": beta,
            "form": _choice(_get(rad, "form", "marks.radius", "pareto"), ("pareto", "smoothed_pareto"),
                            "marks.radius.form"),
            "r0": _number(_get(rad, "r0", "marks.radius", 1.0), "marks.radius.r0"),
            "kappa": _number(_get(rad, "kappa", "marks.radius", 4.0), "marks.radius.kappa"),
        }
        if radius["r0"] <= 0:
            raise ConfigInvalid("marks.radius.r0", "must be positive")
        if radius["form"] == "smoothed_pareto" and radius["kappa"] <= beta:
            raise ConfigInvalid("marks.radius.kappa", "must exceed beta")

        wcfg = _get(marks, "weight", "marks")
        if not isinstance(wcfg, dict) or "form" not in wcfg:
            raise ConfigInvalid("marks.weight.form", "missing required field")
        try:
            wlaw = WeightLaw.from_dict(wcfg)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid("marks.weight", str(exc)) from None
        if not 1.0 < wlaw.alpha <= 2.0:
            raise ConfigInvalid("marks.weight.alpha", f"need alpha in (1, 2], got {wlaw.alpha}")
        weight = dict(wcfg)

        target = _choice(_get(regime, "target", "regime"), REGIMES, "regime.target")
        a = _number(_get(regime, "a", "regime", 1.0), "regime.a")
        if a <= 0:
            raise ConfigInvalid("regime.a", "must be positive")
        if target == "large" and not eta > beta:
            raise ConfigInvalid("model.eta", f"large balls need eta > beta (eta={eta}, beta={beta})")
        if target == "small" and not eta < beta:
            raise ConfigInvalid("model.eta", f"small balls need eta < beta (eta={eta}, beta={beta})")
        if target == "intermediate":
            if abs(eta - beta) > 1e-12:
                raise ConfigInvalid("model.eta", f"intermediate scaling needs eta = beta (eta={eta}, beta={beta})")
            if a != 1.0 and k["envelope"] is not None:
                raise ConfigInvalid("regime.a", "a != 1 is supported for stationary kernels only")
        elif a != 1.0:
            raise ConfigInvalid("regime.a", "a is used by the intermediate regime only")
        if target == "small" and not beta < wlaw.alpha * d:
            raise ConfigInvalid("marks.radius.beta", f"small balls need beta < alpha d (beta={beta}, alpha={wlaw.alpha})")

        grid = _number_list(_get(regime, "rho_grid", "regime"), "regime.rho_grid")
        for i, r in enumerate(grid):
            if not 0 < r <= 1:
                raise ConfigInvalid(f"regime.rho_grid[{i}]", f"rho must lie in (0, 1], got {r}")
        if any(b >= a_ for a_, b in zip(grid, grid[1:])):
            raise ConfigInvalid("regime.rho_grid", "must be strictly decreasing")

        meas_raw = _get(raw, "measures", "$")
        if not isinstance(meas_raw, list) or not meas_raw:
            raise ConfigInvalid("measures", "expected a nonempty list")
        measures, names = [], set()
        for i, m in enumerate(meas_raw):
            path = f"measures[{i}]"
            name = str(_get(m, "name", path))
            if name in names:
                raise ConfigInvalid(f"{path}.name", f"duplicate measure name {name!r}")
            names.add(name)
            role = _choice(_get(m, "role", path, "both"), ROLES, f"{path}.role")
            spec = _get(m, "measure", path)
            try:
                mu = measure_from_dict(spec)
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigInvalid(f"{path}.measure", str(exc)) from None
            if mu.d != d:
                raise ConfigInvalid(f"{path}.measure", f"measure dimension {mu.d} differs from model.d={d}")
            if not mu.is_nonnegative:
                raise ConfigInvalid(f"{path}.measure", "regime studies need a nonnegative measure")
            if target == "small" and not mu.has_density:
                raise ConfigInvalid(f"{path}.measure", "small balls accept density-form measures only")
            p = m.get("p")
            q = m.get("q")
            p = None if p is None else _number(p, f"{path}.p")
            q = None if q is None else _number(q, f"{path}.q")
            entry = MeasureEntry(name, role, dict(spec), p, q)
            pp, qq = entry.certificate_exponents(wlaw.alpha, d)
            if not 0 < pp < beta:
                raise ConfigInvalid(f"{path}.p", f"need 0 < p < beta, got p={pp}")
            if not qq > beta:
                raise ConfigInvalid(f"{path}.q", f"need q > beta, got q={qq}")
            measures.append(entry)

        N = _number(_get(mc, "replicates", "mc"), "mc.replicates", integer=True)
        if N < 100:
            raise ConfigInvalid("mc.replicates", f"need at least 100 replicates, got {N}")
        seed = _get(mc, "seed", "mc")
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigInvalid("mc.seed", "master seed must be an integer in [0, 2^64)")
        thetas = _number_list(_get(mc, "theta_grid", "mc", [0.5, 1.0, 2.0]), "mc.theta_grid")
        if any(t < 0 for t in thetas):
            raise ConfigInvalid("mc.theta_grid", "theta must be nonnegative")
        tgrid = _number_list(_get(mc, "t_grid", "mc", [0.25, 0.5, 1.0, 2.0]), "mc.t_grid")
        ks_thr = _number(_get(mc, "ks_threshold", "mc", 0.05), "mc.ks_threshold")
        if not 0 < ks_thr <= 1:
            raise ConfigInvalid("mc.ks_threshold", "must lie in (0, 1]")
        centering = _choice(_get(mc, "centering", "mc", "continuum"), ("continuum", "cells"), "mc.centering")
        budget = _number(_get(mc, "poisson_budget", "mc", 0.01), "mc.poisson_budget")
        if not 0 < budget < 1:
            raise ConfigInvalid("mc.poisson_budget", "must lie in (0, 1)")

        enabled = _get(lap, "enabled", "laplace", True)
        if not isinstance(enabled, bool):
            raise ConfigInvalid("laplace.enabled", "expected true or false")
        lmode = _choice(_get(lap, "mode", "laplace", "cells"), ("cells", "nodes"), "laplace.mode")
        n_sub = _number(_get(lap, "n_sub", "laplace", 4), "laplace.n_sub", integer=True)
        if n_sub < 1:
            raise ConfigInvalid("laplace.n_sub", "must be at least 1")

        out_dir = str(_get(out, "directory", "output", "out"))
        formats = _get(out, "formats", "output", ["csv", "json"])
        if not isinstance(formats, list) or any(f not in ("csv", "json") for f in formats):
            raise ConfigInvalid("output.formats", "must be a list drawn from ['csv', 'json']")

        return cls(
            d, k, eta, window, per_length, sampler, radius, weight, tuple(measures), target, grid, a,
            N, seed, thetas, tgrid, ks_thr, centering, budget, enabled, lmode, n_sub, out_dir, tuple(formats),
        )

    def to_dict(self) -> dict:
        # deep copy so callers cannot mutate the frozen config's blocks
        return copy.deepcopy({
            "model": {"d": self.d, "kernel": self.kernel, "eta": self.eta, "window": self.window,
                      "per_length": self.per_length, "sampler": self.sampler},
            "marks": {"radius": self.radius, "weight": self.weight},
            "measures": [{"name": m.name, "role": m.role, "measure": m.spec, "p": m.p, "q": m.q}
                         for m in self.measures],
            "regime": {"target": self.regime, "rho_grid": list(self.rho_grid), "a": self.a},
            "mc": {"replicates": self.replicates, "seed": self.seed, "theta_grid": list(self.theta_grid),
                   "t_grid": list(self.t_grid), "ks_threshold": self.ks_threshold,
                   "centering": self.centering, "poisson_budget": self.poisson_budget},
            "laplace": {"enabled": self.laplace_enabled, "mode": self.laplace_mode, "n_sub": self.laplace_n_sub},
            "output": {"directory": self.out_dir, "formats": list(self.formats)},
        })

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "StudyConfig":
        raw = copy.deepcopy(self.to_dict())
        for key, value in changes.items():
            *parents, name = key.split(".")
            node = raw
            for part in parents:
                node = node.get(part) if isinstance(node, dict) else None
                if not isinstance(node, dict):
                    raise ConfigInvalid(key, "no such block")
            if name not in node:
                raise ConfigInvalid(key, "no such field")
            node[name] = value
        return StudyConfig.from_dict(raw)

    # -- model objects -------------------------------------------------------

    @property
    def base_kernel(self) -> StationaryKernel:
        return _make_kernel(self.d, self.kernel)

    @property
    def scaled(self) -> ScaledKernelSpec:
        pref = self.a ** (self.d - self.radius["beta"]) if self.regime == "intermediate" else 1.0
        return ScaledKernelSpec(self.base_kernel, self.eta, pref)

    @property
    def base_window(self) -> WindowSpec:
        w = self.window
        return WindowSpec(tuple(tuple(b) for b in w["bounds"]), w["nodes_per_axis"], w["quadrature_rule"])

    @property
    def radius_law(self) -> RadiusLaw:
        return RadiusLaw(d=self.d, **self.radius)

    @property
    def weight_law(self) -> WeightLaw:
        return WeightLaw.from_dict(self.weight)

    def window_at(self, rho: float, resolution_multiplier: float = 1.0) -> WindowSpec:
        return self.base_window.refined_for(self.scaled.at(rho), self.per_length * resolution_multiplier)


def _make_kernel(d: int, k: dict) -> StationaryKernel:
    env = None if k["envelope"] is None else Envelope(tuple(k["envelope"]["center"]), k["envelope"]["width"],
                                                      k["envelope"]["floor"])
    return StationaryKernel(d, k["amplitude"], k["scale"], k["profile"], env)


def load_preset(name: str) -> StudyConfig:
    """Bundled study configurations, named in ``PRESETS``."""
    if name not in PRESETS:
        raise ConfigInvalid("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("dppballs").joinpath("presets", f"{name}.json").read_text()
    return StudyConfig.from_dict(json.loads(text))


def resolve_config(arg: str) -> StudyConfig:
    """A config path, or ``preset:<name>`` for a bundled configuration."""
    if arg.startswith("preset:"):
        return load_preset(arg.split(":", 1)[1])
    return StudyConfig.load(arg)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def _nonempty(x, what="sample") -> np.ndarray:
    x = np.asarray(x, float).ravel()
    if x.size == 0:
        raise EmptySample(f"{what} is empty")
    return x


def ks_distance(sample_a, sample_b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a, b = _nonempty(sample_a, "first sample"), _nonempty(sample_b, "second sample")
    return float(stats.ks_2samp(a, b).statistic)


@dataclass(frozen=True)
class EmpiricalCF:
    t: np.ndarray
    values: np.ndarray  # complex
    se_real: np.ndarray
    se_imag: np.ndarray


def empirical_cf(sample, t_grid) -> EmpiricalCF:
    """(1/N) sum exp(i t X) per t, with standard errors of both parts."""
    x = _nonempty(sample)
    t = np.atleast_1d(np.asarray(t_grid, float))
    ph = np.outer(t, x)
    c, s = np.cos(ph), np.sin(ph)
    n = x.size
    se = lambda v: v.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(t))
    return EmpiricalCF(t, c.mean(axis=1) + 1j * s.mean(axis=1), se(c), se(s))


@dataclass(frozen=True)
class EmpiricalLaplace:
    theta: float
    value: float
    se: float


def empirical_laplace(sample, theta: float) -> EmpiricalLaplace:
    """Sample mean of exp(-theta X) with its standard error."""
    x = _nonempty(sample)
    e = np.exp(-theta * x)
    return EmpiricalLaplace(float(theta), float(e.mean()), float(e.std(ddof=1) / math.sqrt(x.size)))


def cf_distance(sample, limit_cf, t_grid) -> float:
    """sup over the t grid of |empirical CF - limit CF|."""
    ecf = empirical_cf(sample, t_grid)
    return float(np.max(np.abs(ecf.values - limit_cf(ecf.t))))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ensemble:
    rho: float
    counts: np.ndarray  # points per replicate
    values: np.ndarray  # (N, n_measures) raw field values


def simulate_fields(config: StudyConfig, rho_index: int, sampler: LocationSampler, measures,
                    replicates: int | None = None, threads: int = 1, keep_configs: bool = False):
    """Raw field values of every measure on ``replicates`` marked configurations.

    Replicate k uses the stream (seed, rho_index, k), so results do not
    depend on ``threads``.
    """
    rho = config.rho_grid[rho_index]
    N = config.replicates if replicates is None else int(replicates)
    scaled, radius, weight = config.scaled, config.radius_law, config.weight_law

    def one(k):
        rng = replicate_rng(config.seed, rho_index, k)
        cfg = sample_marked(scaled, sampler.window, radius, weight, rho, rng, sampler=sampler, replicate_id=k)
        # configurations are dropped unless requested: large regimes hold ~1e4 points per replicate
        return (cfg if keep_configs else None), len(cfg), [field_value(cfg, mu) for mu in measures]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(N), chunksize=64))
    else:
        out = [one(k) for k in range(N)]
    counts = np.array([n for _, n, _ in out])
    values = np.array([v for _, _, v in out], float).reshape(N, len(measures))
    ens = Ensemble(rho, counts, values)
    return (ens, [c for c, _, _ in out]) if keep_configs else ens


def limit_marginal(config: StudyConfig, mu) -> LimitMarginal:
    base, win = config.base_kernel, config.base_window
    radius, weight = config.radius_law, config.weight_law
    if config.regime == "large":
        return stable_marginal_large(mu, base, win, radius, weight)
    if config.regime == "small":
        gamma = radius.beta / config.d
        return stable_marginal_small(mu, base, win, sigma_gamma(radius, weight, gamma, config.d), gamma)
    return intermediate_marginal(mu, config.a, base, _dilated_window(win, config.a), radius, weight)


def _dilated_window(window: WindowSpec, a: float) -> WindowSpec:
    # centers of D_a mu's balls live on a W when the model's live on W
    if a == 1.0:
        return window
    return WindowSpec(tuple((a * lo, a * hi) for lo, hi in window.bounds), window.nodes_per_axis,
                      window.quadrature_rule)


def limit_draws(config: StudyConfig, mu, limit: LimitMarginal, size: int, stream: int):
    """``size`` draws of the limit marginal from the stream (seed, 2**31, stream)."""
    rng = replicate_rng(config.seed, 2**31, stream)
    if limit.kind != "poisson_intermediate":
        return limit.sample(rng, size), {}
    win = _dilated_window(config.base_window, config.a)
    eps = 1.0
    for _ in range(60):
        try:
            dr = sample_poisson_field(mu, config.a, config.base_kernel, win, config.radius_law, config.weight_law,
                                      eps, rng, size=size, budget=config.poisson_budget)
        except TruncationBudgetExceeded:
            eps *= 0.5
            continue
        return dr.values, {"epsilon": dr.epsilon, "discarded_variance_fraction": dr.discarded_fraction}
    raise TruncationBudgetExceeded("no truncation radius met the variance budget")


def _limit_cf(limit: LimitMarginal, draws):
    if limit.kind != "poisson_intermediate":
        return limit.stable.cf
    ref = np.asarray(draws, float)
    return lambda t: empirical_cf(ref, t).values


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


SUMMARY_COLUMNS = [
    "regime", "measure", "rho", "lambda", "n_rho", "nodes", "sampler", "expected_count", "mean_count",
    "expectation", "mean", "sd", "ks", "cf_distance",
]


@dataclass
class StudyReport:
    config: StudyConfig
    rows: list = field(default_factory=list)  # summary dicts
    limits: dict = field(default_factory=dict)
    laplace_rows: dict = field(default_factory=dict)  # measure name -> list of StudyRow
    criteria: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)  # measure name -> list of FieldSample
    partial: bool = False
    error: str | None = None

    @property
    def passed(self) -> bool:
        return not self.partial and all(c["passed"] for c in self.criteria if c["required"])

    def to_dict(self) -> dict:
        lap = {
            name: [dict(zip(("regime", "rho", "theta", "exact_log_lt", "first_order", "remainder",
                              "limit_exponent", "gap", "tr2", "tr2_bound", "rate", "rate_bound"),
                             [r.regime, *[float(getattr(r, c)) for c in ("rho", "theta", "exact_log_lt",
                                                                           "first_order", "remainder",
                                                                           "limit_exponent", "gap", "tr2",
                                                                           "tr2_bound", "rate",
                                                                           "rate_bound")]]))
                   | {"identity_residual": r.result.identity_residual,
                      "trace_identity_gap": r.result.trace_identity_gap,
                      "lemma_trace_powers": r.lemma_holds, "trace2_bound_holds": r.trace_bound_holds}
                   for r in rows]
            for name, rows in self.laplace_rows.items()
        }
        return {
            "config": self.config.to_dict(),
            "config_sha256": self.config.digest(),
            "environment": environment_record(),
            "seed": self.config.seed,
            "limits": self.limits,
            "summary": self.rows,
            "laplace": lap,
            "criteria": self.criteria,
            "partial": self.partial,
            "error": self.error,
            "passed": self.passed,
        }

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if "csv" in self.config.formats:
            p = out / "summary.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(SUMMARY_COLUMNS)
                for r in self.rows:
                    w.writerow([_cell(r[c]) for c in SUMMARY_COLUMNS])
            written.append(p)
            for name, samples in self.fields.items():
                p = out / f"fields_{name}.csv"
                field_samples_to_csv(samples, p)
                written.append(p)
            for name, rows in self.laplace_rows.items():
                p = out / f"laplace_{name}.csv"
                study_to_csv(rows, p)
                written.append(p)
        if "json" in self.config.formats:
            p = out / "report.json"
            with open(p, "w") as fh:
                json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
                fh.write("\n")
            written.append(p)
        return written


def _cell(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@lru_cache(maxsize=1)
def environment_record() -> dict:
    import numba
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _criterion(name: str, invariant: str, passed: bool, detail: str, required: bool = True) -> dict:
    return {"name": name, "invariant": invariant, "passed": bool(passed), "detail": detail, "required": required}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def build_sampler(config: StudyConfig, rho: float, resolution_multiplier: float = 1.0) -> LocationSampler:
    return LocationSampler(config.scaled.at(rho), config.window_at(rho, resolution_multiplier), config.sampler)


def spectrum_report(config: StudyConfig, resolution_multiplier: float = 1.0) -> list[dict]:
    """Per-rho discretization summary; raises if a spectrum leaves [0, 1)."""
    out = []
    for rho in config.rho_grid:
        s = build_sampler(config, rho, resolution_multiplier)
        norm = s.operator.spectral_norm
        norm = float(norm() if callable(norm) else norm)
        if norm >= 1.0:
            raise SpectrumOutOfRange(f"rho={rho}: discretized spectral norm {norm:.6g} >= 1")
        out.append({"rho": rho, "lambda": config.scaled.lam(rho), "nodes": int(s.window.nodes.shape[0]),
                    "sampler": s.method, "spectral_norm": float(norm), "expected_count": s.expected_count})
    return out


def run_laplace(config: StudyConfig, samplers=None, resolution_multiplier: float = 1.0) -> dict:
    """Exact Laplace tables for the measures with a laplace role."""
    radius, weight = config.radius_law, config.weight_law
    if samplers is None:
        samplers = {rho: build_sampler(config, rho, resolution_multiplier) for rho in config.rho_grid}
    tables = {}
    for entry in config.measures:
        if entry.role not in ("laplace", "both"):
            continue
        mu = entry.measure
        limit = limit_marginal(config, mu)
        if limit.kind != "poisson_intermediate" and not (limit.skewness == 1.0 or limit.index == 2.0):
            continue  # no Laplace transform; the CF distance covers this case
        # the trace bound works in the alpha = 2 class, which contains every alpha <= 2 class
        p, q = entry.certificate_exponents(2.0, config.d)
        try:
            cert = verify_mab(mu, 2.0, radius.beta, p, q)
        except CertificateFailed:
            cert = None
        tables[entry.name] = laplace_convergence_study(
            config.regime, mu, config.theta_grid, config.rho_grid, config.scaled, config.base_window, radius,
            weight, limit, certificate=cert, window_for=lambda rho: samplers[rho].window,
            mode=config.laplace_mode, n_sub=config.laplace_n_sub, samplers=samplers,
        )
    return tables


def run_study(config: StudyConfig, *, threads: int = 1, resolution_multiplier: float = 1.0,
              laplace: bool | None = None) -> StudyReport:
    """Full regime study; numeric failures return a partial report."""
    report = StudyReport(config)
    try:
        _run_study(config, report, threads, resolution_multiplier,
                   config.laplace_enabled if laplace is None else laplace)
    except NumericError as exc:
        report.partial = True
        report.error = f"{type(exc).__name__}: {exc}"
    return report


def _run_study(config, report, threads, resolution_multiplier, do_laplace):
    radius, weight = config.radius_law, config.weight_law
    ks_entries = [m for m in config.measures if m.role in ("ks", "both")]
    mus = [m.measure for m in ks_entries]
    limits, refs, cfs = [], [], []
    for j, (entry, mu) in enumerate(zip(ks_entries, mus)):
        lim = limit_marginal(config, mu)
        draws, extra = limit_draws(config, mu, lim, config.replicates, j)
        limits.append(lim)
        refs.append(draws)
        cfs.append(_limit_cf(lim, draws))
        report.limits[entry.name] = lim.to_dict() | extra
        report.fields[entry.name] = []

    samplers = {}
    ks_by_measure = {e.name: [] for e in ks_entries}
    count_ok = True
    for i, rho in enumerate(config.rho_grid):
        sampler = build_sampler(config, rho, resolution_multiplier)
        samplers[rho] = sampler
        ens = simulate_fields(config, i, sampler, mus, threads=threads)
        lam = config.scaled.lam(rho)
        nrm = normalization(config.regime, lam, rho, weight.alpha, radius.beta, config.d).n
        mean_count = float(ens.counts.mean())
        se_count = float(ens.counts.std(ddof=1) / math.sqrt(len(ens.counts)))
        count_ok &= abs(mean_count - sampler.expected_count) <= 4 * se_count + 1e-12
        for j, (entry, mu) in enumerate(zip(ks_entries, mus)):
            E = field_expectation(config.scaled, sampler.window, radius, weight, mu, rho, mode=config.centering)
            samples = field_samples(ens.values[:, j], E, nrm, rho)
            z = np.array([s.normalized for s in samples])
            report.fields[entry.name].extend(samples)
            ks = ks_distance(z, refs[j])
            ks_by_measure[entry.name].append(ks)
            report.rows.append({
                "regime": config.regime, "measure": entry.name, "rho": float(rho), "lambda": lam,
                "n_rho": float(nrm), "nodes": int(sampler.window.nodes.shape[0]), "sampler": sampler.method,
                "expected_count": sampler.expected_count, "mean_count": mean_count, "expectation": float(E),
                "mean": float(z.mean()), "sd": float(z.std(ddof=1)), "ks": ks,
                "cf_distance": cf_distance(z, cfs[j], config.t_grid),
            })

    report.criteria.append(_criterion(
        "count_mean", "dpp_engine: expected point count equals the trace", count_ok,
        "mean count within 4 SE of sum of eigenvalues at every rho"))
    for name, ks in ks_by_measure.items():
        report.criteria.append(_criterion(
            f"ks_smallest_rho[{name}]", "harness: KS distance to the limit marginal below threshold",
            ks[-1] < config.ks_threshold, f"KS={ks[-1]:.4f} at rho={config.rho_grid[-1]} "
                                          f"(threshold {config.ks_threshold})"))
        mono = all(b < a for a, b in zip(ks, ks[1:]))
        report.criteria.append(_criterion(
            f"ks_decreasing[{name}]", "harness: KS distance decreases along the rho grid", mono,
            "KS by rho: " + ", ".join(f"{v:.4f}" for v in ks), required=False))

    if do_laplace:
        report.laplace_rows = run_laplace(config, samplers, resolution_multiplier)
        for name, rows in report.laplace_rows.items():
            worst = max(r.result.trace_identity_gap for r in rows)
            report.criteria += [
                _criterion(f"trace_identity[{name}]", "laplace_lab: Tr(K_eff) equals the first-order quadrature",
                           worst < 1e-8, f"max relative gap {worst:.3e}"),
                _criterion(f"lemma_trace_powers[{name}]", "kernelspace: Tr(A^n) <= Tr(A^2)^(n/2)",
                           all(r.lemma_holds for r in rows), f"{len(rows)} operators"),
                _criterion(f"remainder_bound[{name}]", "laplace_lab: |remainder| <= sum_k Tr2^(k/2)/k",
                           all(r.remainder_within_bound for r in rows), f"{len(rows)} grid points"),
                _criterion(f"trace2_bound[{name}]", "laplace_lab: Tr2 <= M theta^2 lambda rho^q / n^2",
                           all(r.trace_bound_holds for r in rows), f"{len(rows)} grid points"),
            ]
            if config.regime == "intermediate":
                ok, detail = laplace_gap_check(rows)
                report.criteria.append(_criterion(
                    f"laplace_gap[{name}]", "laplace_lab: exact log-LT approaches the Poisson exponent",
                    ok, detail, required=False))


def laplace_gap_check(rows, rel_tol: float = 0.05) -> tuple[bool, str]:
    """Relative gaps decrease along rho for every theta and end below ``rel_tol``."""
    by_theta = {}
    for r in rows:
        if r.theta > 0:
            by_theta.setdefault(r.theta, []).append((r.rho, r.gap / abs(r.limit_exponent)))
    ok, parts = True, []
    for th, pts in sorted(by_theta.items()):
        rel = [g for _, g in sorted(pts, reverse=True)]
        ok &= all(b < a for a, b in zip(rel, rel[1:])) and rel[-1] < rel_tol
        parts.append(f"theta={th:g}: " + ", ".join(f"{g:.4f}" for g in rel))
    return bool(ok and by_theta), "; ".join(parts)


def write_ensembles(config: StudyConfig, out_dir, *, replicates: int | None = None, threads: int = 1,
                    resolution_multiplier: float = 1.0) -> list[Path]:
    """Marked configurations and field values for every rho, as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mus = [m.measure for m in config.measures]
    radius, weight = config.radius_law, config.weight_law
    written = []
    for i, rho in enumerate(config.rho_grid):
        sampler = build_sampler(config, rho, resolution_multiplier)
        ens, cfgs = simulate_fields(config, i, sampler, mus, replicates, threads, keep_configs=True)
        p = out / f"configurations_rho{i}.csv"
        configurations_to_csv(cfgs, p, config.d)
        written.append(p)
        nrm = normalization(config.regime, config.scaled.lam(rho), rho, weight.alpha, radius.beta, config.d).n
        for j, (entry, mu) in enumerate(zip(config.measures, mus)):
            E = field_expectation(config.scaled, sampler.window, radius, weight, mu, rho, mode=config.centering)
            p = out / f"fields_{entry.name}_rho{i}.csv"
            field_samples_to_csv(field_samples(ens.values[:, j], E, nrm, rho), p)
            written.append(p)
    return written


def write_laplace(config: StudyConfig, out_dir, resolution_multiplier: float = 1.0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in run_laplace(config, resolution_multiplier=resolution_multiplier).items():
        p = out / f"laplace_{name}.csv"
        study_to_csv(rows, p)
        written.append(p)
    return written


__all__ = [
    "StudyConfig", "MeasureEntry", "StudyReport", "run_study", "ks_distance", "empirical_cf",
    "empirical_laplace", "cf_distance", "simulate_fields", "limit_marginal", "limit_draws", "load_preset",
    "resolve_config", "spectrum_report", "run_laplace", "write_ensembles", "write_laplace", "laplace_gap_check",
    "build_sampler", "PRESETS", "DPPBallsError",
]
