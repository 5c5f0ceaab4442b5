import math

import numpy as np
import pytest

from dppballs.dpp_engine import (
    LocationSampler,
    MarkedConfiguration,
    configurations_to_csv,
    replicate_rng,
    sample_dpp,
    sample_dpp_indices,
    sample_marked,
)
from dppballs.errors import SpectrumOutOfRange
from dppballs.kernelspace import ScaledKernelSpec, StationaryKernel, WindowSpec, discretize, spectral_from_matrix
from dppballs.marks import ExponentialWeight, PointMassWeight, RadiusLaw

KERNEL = StationaryKernel(1, 0.5, 1.0, intensity=3.0)
WINDOW = WindowSpec.interval(-3.0, 3.0, 60)


def _counts(sampler, N, seed):
    return np.array([len(sampler.sample(replicate_rng(seed, k))) for k in range(N)])


def test_zero_kernel_gives_empty_configurations():
    spec = discretize(StationaryKernel(1, 0.0), WINDOW)
    rng = np.random.default_rng(0)
    assert all(len(sample_dpp(spec, WINDOW, rng)) == 0 for _ in range(50))


def test_count_mean_and_variance_match_eigenvalues():
    sampler = LocationSampler(KERNEL, WINDOW, "hkpv")
    lam = sampler.operator.eigenvalues
    assert (lam**2).sum() >= 0.5
    c = _counts(sampler, 10_000, 1)
    n = c.size
    mean, var = c.mean(), c.var(ddof=1)
    assert abs(mean - lam.sum()) < 3 * c.std(ddof=1) / math.sqrt(n)
    m4 = np.mean((c - mean) ** 4)
    se_var = math.sqrt((m4 - var**2) / n)
    assert abs(var - np.sum(lam * (1 - lam))) < 3 * se_var
    # sub-Poisson: variance below the mean by at least 3 SE
    assert (mean - var) / math.sqrt(c.std(ddof=1) ** 2 / n + se_var**2) > 3


def test_first_intensity_per_bin():
    sampler = LocationSampler(KERNEL, WINDOW, "hkpv")
    N = 10_000
    edges = np.linspace(-3.0, 3.0, 13)  # cell-aligned bins of 5 nodes
    counts = np.zeros((N, 12))
    for k in range(N):
        counts[k] = np.histogram(sampler.sample(replicate_rng(2, k))[:, 0], edges)[0]
    expected = np.add.reduceat(np.diag(sampler.operator.matrix), np.arange(0, 60, 5))
    se = counts.std(axis=0, ddof=1) / math.sqrt(N)
    ok = np.abs(counts.mean(axis=0) - expected) <= 4 * se
    assert ok.mean() >= 0.95


def test_banded_sampler_marginals_match_dense():
    window = WindowSpec.interval(-10.0, 10.0, 600)
    dense = LocationSampler(KERNEL, window, "hkpv")
    banded = LocationSampler(KERNEL, window, "banded")
    assert banded.expected_count == pytest.approx(dense.expected_count, rel=1e-12)
    N = 2000
    incl = np.zeros(600)
    counts = np.empty(N)
    for k in range(N):
        pts = banded.sample(replicate_rng(3, k))[:, 0]
        idx = np.unique(np.searchsorted(window.cells[1][:, 0], pts))
        incl[idx] += 1
        counts[k] = idx.size
    assert abs(counts.mean() - dense.expected_count) < 3 * counts.std(ddof=1) / math.sqrt(N)
    lam = dense.operator.eigenvalues
    assert abs(counts.var(ddof=1) - np.sum(lam * (1 - lam))) < 0.1 * np.sum(lam * (1 - lam))
    p = np.diag(dense.operator.matrix)
    z = (incl / N - p) / np.sqrt(p * (1 - p) / N)
    assert np.mean(np.abs(z) <= 4) >= 0.99


def test_sampling_rejects_spectrum_at_one():
    spec = spectral_from_matrix(np.diag([1.0, 0.2]), check=False)
    with pytest.raises(SpectrumOutOfRange):
        sample_dpp_indices(spec, np.random.default_rng(0))


def test_points_inside_window_and_deterministic():
    sampler = LocationSampler(KERNEL, WINDOW)
    a = sampler.sample(replicate_rng(7, 0, 3))
    b = sampler.sample(replicate_rng(7, 0, 3))
    np.testing.assert_array_equal(a, b)
    assert np.all(WINDOW.contains(a))
    c = sampler.sample(replicate_rng(7, 0, 4))
    assert not (len(a) == len(c) and np.array_equal(a, c))


# -- marked configurations --------------------------------------------------


SCALED = ScaledKernelSpec(StationaryKernel(1, 0.3), eta=1.2)
RADIUS = RadiusLaw(1.2)


def test_point_mass_weights_reduce_to_unweighted():
    cfg = sample_marked(SCALED, WINDOW, RADIUS, PointMassWeight(), 0.5, np.random.default_rng(1))
    assert len(cfg) > 0
    assert np.all(cfg.weights == 1.0)
    assert np.all(cfg.radii >= 0.5)
    assert np.all(WINDOW.contains(cfg.points))


def test_expected_total_weight_factorizes():
    weight = ExponentialWeight(2.0)
    rho = 0.5
    sampler = LocationSampler(SCALED.at(rho), WINDOW)
    tot = np.array([
        sample_marked(SCALED, WINDOW, RADIUS, weight, rho, replicate_rng(4, k), sampler=sampler).weights.sum()
        for k in range(10_000)
    ])
    target = weight.mean * sampler.expected_count
    assert abs(tot.mean() - target) < 3 * tot.std(ddof=1) / math.sqrt(tot.size)


def test_rho_one_locations_equal_base_sampler():
    base = StationaryKernel(1, 0.3)
    scaled = ScaledKernelSpec(base, eta=1.2)
    cfg = sample_marked(scaled, WINDOW, RADIUS, ExponentialWeight(), 1.0, np.random.default_rng(11))
    pts = sample_dpp(discretize(base, WINDOW), WINDOW, np.random.default_rng(11))
    np.testing.assert_array_equal(cfg.points, pts)


def test_marked_configuration_validation_and_concat():
    a = MarkedConfiguration(np.zeros((2, 1)), np.ones(2), np.ones(2), 0.5)
    b = MarkedConfiguration(np.ones((1, 1)), np.full(1, 2.0), np.full(1, 3.0), 0.5)
    c = a.concat(b)
    assert len(c) == 3 and c.d == 1
    with pytest.raises(ValueError):
        MarkedConfiguration(np.zeros((2, 1)), np.ones(2), np.array([1.0, 0.0]), 0.5)
    with pytest.raises(ValueError):
        MarkedConfiguration(np.zeros((2, 1)), np.ones(3), np.ones(2), 0.5)


def test_configuration_csv(tmp_path):
    cfgs = [sample_marked(SCALED, WINDOW, RADIUS, ExponentialWeight(), 0.5, replicate_rng(5, k), replicate_id=k)
            for k in range(3)]
    p = tmp_path / "configs.csv"
    configurations_to_csv(cfgs, p, 1)
    lines = p.read_text().splitlines()
    assert lines[0] == "x_1,r,m,replicate_id"
    assert len(lines) == 1 + sum(len(c) for c in cfgs)
    row = lines[1].split(",")
    assert float(row[0]) == cfgs[0].points[0, 0] and row[3] == "0"
