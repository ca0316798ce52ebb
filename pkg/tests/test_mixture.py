import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denoiselab import numerics
from denoiselab.errors import DegenerateDensityError, DimensionError
from denoiselab.mixture import (
    CorruptionModel,
    GaussianMixture,
    corrupt,
    density,
    log_density,
    posterior_mean,
    responsibilities,
    sample,
    score,
)

from mixtures import bimodal, random_mixture

STD = GaussianMixture.gaussian(0.0, 1.0)
TWO_POINTS = GaussianMixture.point_masses([-1.0, 1.0])


def test_density_examples():
    assert density(STD, 0.0) == pytest.approx(0.3989422804, abs=1e-10)
    two = GaussianMixture([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0])
    assert density(two, 0.0) == pytest.approx(0.2419707245, abs=1e-10)
    assert density(GaussianMixture.gaussian([0, 0], 1.0), [0.0, 0.0]) == pytest.approx(0.1591549431, abs=1e-10)


def test_log_density_examples():
    assert log_density(STD, 0.0) == pytest.approx(-0.9189385332, abs=1e-10)
    assert log_density(STD, 30.0) == pytest.approx(-450.9189385332, abs=1e-9)
    noisy = corrupt(TWO_POINTS, CorruptionModel(1.0))
    assert log_density(noisy, 0.0) == pytest.approx(-1.4189385332, abs=1e-10)


def test_log_density_far_tail_finite():
    m = bimodal()
    vals = log_density(m, np.array([[-1e3], [1e3]]))
    assert np.all(np.isfinite(vals))
    assert np.all(np.isfinite(score(m, np.array([[-1e3], [1e3]]))))


def test_score_examples():
    assert score(STD, 0.0)[0] == 0.0
    assert score(STD, 1.0)[0] == pytest.approx(-1.0, abs=1e-15)
    # frozen from an independent closed-form central difference (h = 1e-5)
    assert score(bimodal(), 0.3)[0] == pytest.approx(-0.5682294218045669, abs=1e-8)


def test_score_matches_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for i in range(100):
        d = 1 + i % 3
        m = random_mixture(rng, d)
        x = rng.uniform(-3, 3, d)
        fd = numerics.central_difference_gradient(lambda p: log_density(m, p), x, 1e-5)
        worst = max(worst, np.max(np.abs(score(m, x) - fd)))
    assert worst < 1e-6


def test_degenerate_density_rejected():
    for fn in (density, log_density, score):
        with pytest.raises(DegenerateDensityError, match="corrupt"):
            fn(TWO_POINTS, 0.0)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        density(STD, [0.0, 1.0])
    with pytest.raises(DimensionError):
        posterior_mean(STD, CorruptionModel(1.0), [0.0, 0.0])


def test_corrupt_examples():
    n = CorruptionModel(1.0)
    assert corrupt(STD, n) == GaussianMixture.gaussian(0.0, 2.0)
    assert corrupt(GaussianMixture.point_masses([0.0]), CorruptionModel(0.5)) == GaussianMixture.gaussian(0.0, 0.25)
    expected = GaussianMixture([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0])
    assert corrupt(TWO_POINTS, n) == expected


@settings(max_examples=50)
@given(st.floats(0.01, 3.0), st.floats(0.01, 3.0), st.integers(0, 2**32))
def test_corrupt_semigroup(s1, s2, seed):
    m = random_mixture(np.random.default_rng(seed), 2)
    a = corrupt(corrupt(m, CorruptionModel(s1)), CorruptionModel(s2))
    b = corrupt(m, CorruptionModel(math.sqrt(s1**2 + s2**2)))
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_allclose(a.covs, b.covs, rtol=1e-14, atol=1e-14)


def test_density_normalization():
    rng = np.random.default_rng(3)
    for _ in range(10):
        m = random_mixture(rng, 1)
        lo = float(np.min(m.means - 10 * np.sqrt(m.covs[:, 0, :])))
        hi = float(np.max(m.means + 10 * np.sqrt(m.covs[:, 0, :])))
        rule = numerics.trapezoid(lo, hi, 20_000)
        assert abs(rule.integrate(lambda x: density(m, x[:, None])) - 1) < 1e-8


def test_responsibilities_sum_to_one():
    rng = np.random.default_rng(8)
    for _ in range(20):
        m = random_mixture(rng, 2)
        r = responsibilities(m, rng.uniform(-50, 50, (100, 2)))
        np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)


def test_sample_mean_clt():
    x = sample(STD, 10**6, seed=17)
    assert abs(x.mean()) <= 0.004


def test_sample_point_mass_exact():
    m = GaussianMixture([0.3, 0.7], [[5.0, -2.0], [0.0, 0.0]], [np.zeros((2, 2)), np.eye(2)])
    x = sample(m, 5000, seed=1)
    atom = np.all(x == [5.0, -2.0], axis=1)
    assert 0.25 < atom.mean() < 0.35
    assert not np.any(np.all(x[~atom] == [5.0, -2.0], axis=1))


def test_sample_deterministic():
    m = bimodal()
    np.testing.assert_array_equal(sample(m, 1000, 99), sample(m, 1000, 99))
    assert not np.array_equal(sample(m, 1000, 99), sample(m, 1000, 100))


def test_sample_covariance():
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    x = sample(GaussianMixture.gaussian([1.0, -1.0], cov), 200_000, 5)
    np.testing.assert_allclose(np.cov(x.T), cov, atol=0.02)
    np.testing.assert_allclose(x.mean(axis=0), [1.0, -1.0], atol=0.02)


def test_posterior_mean_gaussian_shrinkage():
    prior = GaussianMixture.gaussian(1.5, 0.7)
    n = CorruptionModel(0.9)
    for xt in (-3.0, 0.0, 2.2):
        expected = (0.7 * xt + 0.81 * 1.5) / (0.7 + 0.81)
        assert posterior_mean(prior, n, xt)[0] == pytest.approx(expected, abs=1e-14)


def test_posterior_mean_two_points():
    n = CorruptionModel(1.0)
    assert posterior_mean(TWO_POINTS, n, 0.0)[0] == 0.0
    assert posterior_mean(TWO_POINTS, n, 0.5)[0] == pytest.approx(0.46211715726000974, abs=1e-15)


def test_posterior_mean_against_brute_force():
    # frozen from dense trapezoid integration of x p(xt|x) p(x) over [-30, 30]
    assert posterior_mean(bimodal(), CorruptionModel(0.8), 0.3)[0] == pytest.approx(0.11264115081566717, abs=1e-10)


def test_posterior_mean_is_tweedie():
    rng = np.random.default_rng(21)
    for i in range(50):
        d = 1 + i % 4
        m = random_mixture(rng, d)
        n = CorruptionModel(rng.uniform(0.1, 2.0))
        xt = rng.uniform(-4, 4, (20, d))
        lhs = posterior_mean(m, n, xt)
        rhs = xt + n.variance * score(corrupt(m, n), xt)
        assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixture([0.5, 0.6], [0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 2.0], [2.0, 1.0]]])
    with pytest.raises(ValueError):
        GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 0.5], [0.0, 1.0]]])
    with pytest.raises(ValueError):
        GaussianMixture([1.0], [np.nan], [1.0])
    with pytest.raises(DimensionError):
        GaussianMixture.gaussian(np.zeros(9), 1.0)
    with pytest.raises(ValueError):
        CorruptionModel(0.0)


def test_json_round_trip(tmp_path):
    spec = {
        "dim": 2,
        "components": [
            {"weight": 0.25, "mean": [0.0, 1.0], "cov": 0.5},
            {"weight": 0.75, "mean": [-1.0, 0.0], "cov": [[1.0, 0.2], [0.2, 2.0]]},
        ],
    }
    path = tmp_path / "mix.json"
    path.write_text(json.dumps(spec))
    m = GaussianMixture.from_json(path)
    np.testing.assert_array_equal(m.covs[0], 0.5 * np.eye(2))
    assert GaussianMixture.from_dict(m.to_dict()) == m
    bad = dict(spec, components=[{"weight": 1.0, "mean": [0.0], "cov": 1.0}])
    with pytest.raises(DimensionError):
        GaussianMixture.from_dict(bad)
