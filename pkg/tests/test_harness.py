import json
import math

import numpy as np
import pytest

from dppballs.errors import ConfigInvalid, EmptySample
from dppballs.harness import (
    PRESETS,
    StudyConfig,
    build_sampler,
    empirical_cf,
    empirical_laplace,
    ks_distance,
    laplace_gap_check,
    load_preset,
    resolve_config,
    run_study,
    simulate_fields,
    spectrum_report,
    write_ensembles,
)


@pytest.fixture(scope="module")
def smoke():
    return load_preset("smoke")


# -- statistics -------------------------------------------------------------


def test_ks_distance_examples():
    assert ks_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert ks_distance([0.0, 1.0], [5.0, 6.0]) == 1.0
    # ECDFs differ by 1/2 on [0.5, 1)
    assert ks_distance([0.0, 1.0], [0.5]) == pytest.approx(0.5)
    with pytest.raises(EmptySample):
        ks_distance([], [1.0])


def test_empirical_cf(rng):
    x = rng.standard_normal(20_000)
    cf = empirical_cf(np.concatenate([x, -x]), [0.0, 0.5, 1.0, 2.0])
    assert cf.values[0] == 1.0
    assert np.all(np.abs(cf.values.imag) <= 3 * cf.se_imag + 1e-15)
    one = empirical_cf(x, [1.0])
    assert abs(one.values[0].real - math.exp(-0.5)) < 3 * one.se_real[0]
    with pytest.raises(EmptySample):
        empirical_cf([], [1.0])


def test_empirical_laplace(rng):
    x = rng.exponential(1.0, 50_000)
    lt = empirical_laplace(x, 1.0)
    assert abs(lt.value - 0.5) < 3 * lt.se
    assert empirical_laplace([0.0, 0.0], 3.0).value == 1.0


def test_laplace_gap_check():
    Row = type("Row", (), {})

    def row(rho, theta, gap, lim):
        r = Row()
        r.rho, r.theta, r.gap, r.limit_exponent = rho, theta, gap, lim
        return r

    good = [row(0.5, 1.0, 0.2, 1.0), row(0.25, 1.0, 0.01, 1.0), row(0.5, 0.0, 0.0, 0.0)]
    assert laplace_gap_check(good)[0]
    assert not laplace_gap_check([row(0.5, 1.0, 0.01, 1.0), row(0.25, 1.0, 0.02, 1.0)])[0]
    assert not laplace_gap_check([row(0.5, 0.0, 0.0, 0.0)])[0]


# -- configuration ----------------------------------------------------------


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_round_trip(name):
    cfg = load_preset(name)
    again = StudyConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_to_dict_is_a_copy(smoke):
    digest = smoke.digest()
    raw = smoke.to_dict()
    raw["measures"][0]["measure"]["height"] = 5.0
    raw["model"]["kernel"]["amplitude"] = 0.1
    assert smoke.digest() == digest
    assert smoke.measures[0].spec["height"] == 1.0


def test_digest_tracks_changes(smoke):
    assert smoke.replace(**{"mc.seed": 8}).digest() != smoke.digest()
    assert smoke.replace(**{"mc.seed": 7}).digest() == smoke.digest()


@pytest.mark.parametrize("key,value,path", [
    ("marks.radius.beta", 2.5, "marks.radius.beta"),
    ("marks.radius.beta", 1.0, "marks.radius.beta"),
    ("model.eta", 1.5, "model.eta"),
    ("regime.rho_grid", [0.25, 0.5], "regime.rho_grid"),
    ("regime.rho_grid", [1.5, 0.5], "regime.rho_grid[0]"),
    ("mc.replicates", 99, "mc.replicates"),
    ("mc.seed", -1, "mc.seed"),
    ("mc.seed", 1.5, "mc.seed"),
    ("model.d", 3, "model.d"),
    ("model.kernel.amplitude", -0.1, "model.kernel.amplitude"),
    ("marks.weight", {"form": "pareto_positive", "alpha": 0.8, "m0": 1.0}, "marks.weight"),
    ("regime.target", "huge", "regime.target"),
])
def test_config_rejections(smoke, key, value, path):
    with pytest.raises(ConfigInvalid) as exc:
        smoke.replace(**{key: value})
    assert exc.value.path == path


def test_config_rejects_signed_measure(smoke):
    raw = smoke.to_dict()
    raw["measures"][0]["measure"]["height"] = -1.0
    with pytest.raises(ConfigInvalid) as exc:
        StudyConfig.from_dict(raw)
    assert exc.value.path == "measures[0].measure"


def test_config_large_and_small_eta_rules():
    large = load_preset("large")
    with pytest.raises(ConfigInvalid):
        large.replace(**{"model.eta": 1.0})
    small = load_preset("small")
    with pytest.raises(ConfigInvalid):
        small.replace(**{"model.eta": small.radius["beta"] + 0.1})


def test_replace_unknown_keys(smoke):
    with pytest.raises(ConfigInvalid):
        smoke.replace(**{"mc.replicate": 200})
    with pytest.raises(ConfigInvalid):
        smoke.replace(**{"nothing.here": 1})


def test_resolve_config(tmp_path, smoke):
    assert resolve_config("preset:smoke") == smoke
    with pytest.raises(ConfigInvalid):
        resolve_config("preset:none")
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(smoke.to_dict()))
    assert resolve_config(str(p)) == smoke
    p.write_text("{not json")
    with pytest.raises(ConfigInvalid):
        resolve_config(str(p))
    with pytest.raises(ConfigInvalid):
        resolve_config(str(tmp_path / "missing.json"))


# -- runs -------------------------------------------------------------------


def test_simulation_is_deterministic_and_thread_independent(smoke):
    sampler = build_sampler(smoke, smoke.rho_grid[0])
    mus = [m.measure for m in smoke.measures]
    a = simulate_fields(smoke, 0, sampler, mus, replicates=200)
    b = simulate_fields(smoke, 0, sampler, mus, replicates=200, threads=3)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.counts, b.counts)
    c = simulate_fields(smoke.replace(**{"mc.seed": 8}), 0, sampler, mus, replicates=200)
    assert not np.array_equal(a.values, c.values)


def test_spectrum_report(smoke):
    rows = spectrum_report(smoke)
    assert len(rows) == len(smoke.rho_grid)
    norms = [r["spectral_norm"] for r in rows]
    assert all(0 < n < 1 for n in norms)
    assert norms == sorted(norms)


def test_write_ensembles(tmp_path, smoke):
    paths = write_ensembles(smoke, tmp_path, replicates=5)
    names = sorted(p.name for p in paths)
    assert "configurations_rho0.csv" in names and "fields_bump_rho2.csv" in names
    rows = (tmp_path / "fields_interval_rho1.csv").read_text().splitlines()
    assert len(rows) == 6


def test_smoke_study_passes(tmp_path, smoke):
    report = run_study(smoke)
    assert report.passed and not report.partial
    assert {c["name"] for c in report.criteria} >= {"count_mean", "ks_smallest_rho[interval]",
                                                     "trace2_bound[bump]", "lemma_trace_powers[interval]"}
    z = np.array([s.normalized for s in report.fields["interval"] if s.rho == smoke.rho_grid[-1]])
    assert abs(z.mean()) < 4 * z.std(ddof=1) / math.sqrt(z.size)
    written = report.write(tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["passed"] and data["config_sha256"] == smoke.digest()
    assert {p.name for p in written} >= {"summary.csv", "report.json", "laplace_interval.csv"}
