"""Gaussian utilities: quantiles, closed-form CRPS, ensembles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probpnn.gaussian import (GaussianForecast, crps_gaussian, gaussian_cdf,
                              quantile, sample_ensemble, to_gaussian)
from probpnn.model import ProbabilisticForecast
from probpnn.psf import PSFForecast


def erf_cdf(x):
    """Independent Gaussian CDF from the standard library error function."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def bisect_quantile(alpha, lo=-10.0, hi=10.0, tol=1e-12):
    """Independent probit via bisection on the erf-based CDF."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if erf_cdf(mid) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def unit_forecast(n=24):
    return GaussianForecast(np.zeros(n), np.ones(n))


class TestToGaussian:
    def stamp(self):
        return np.datetime64("2021-01-04T00:00:00")

    def test_sigma_variant_identity(self):
        fc = ProbabilisticForecast(self.stamp(), np.zeros(3),
                                   np.array([2.0, 1.0, 0.5]), "sigma")
        g = to_gaussian(fc)
        assert np.array_equal(g.sigma, [2.0, 1.0, 0.5])

    def test_sigma_squared_variant_square_root(self):
        fc = ProbabilisticForecast(self.stamp(), np.zeros(3),
                                   np.array([4.0, 9.0, 1.0]), "sigma_squared")
        g = to_gaussian(fc)
        assert np.array_equal(g.sigma, [2.0, 3.0, 1.0])

    def test_psf_pass_through_with_floor(self):
        fc = PSFForecast(mu=np.arange(3.0), sigma=np.array([1.0, 0.0, 2.0]))
        g = to_gaussian(fc)
        assert np.array_equal(g.mu, np.arange(3.0))
        assert np.array_equal(g.sigma, [1.0, 1e-6, 2.0])

    def test_nonpositive_error_rejected(self):
        fc = ProbabilisticForecast(self.stamp(), np.zeros(2),
                                   np.array([1.0, 0.0]), "sigma")
        with pytest.raises(ValueError, match="positive"):
            to_gaussian(fc)

    def test_gaussian_forecast_invariant(self):
        with pytest.raises(ValueError, match="positive"):
            GaussianForecast(np.zeros(2), np.array([1.0, 0.0]))


class TestQuantile:
    def test_median_is_mu(self):
        g = GaussianForecast(np.arange(5.0), np.full(5, 2.0))
        assert np.array_equal(quantile(g, 0.5), np.arange(5.0))

    def test_standard_normal_095(self):
        got = quantile(unit_forecast(1), 0.95)[0]
        assert got == pytest.approx(1.6448536269514722, abs=1e-9)
        assert got == pytest.approx(bisect_quantile(0.95), abs=1e-9)

    @given(st.floats(0.01, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_symmetry(self, alpha):
        g = GaussianForecast(np.full(3, 4.0), np.full(3, 1.5))
        left = quantile(g, alpha)
        right = quantile(g, 1.0 - alpha)
        np.testing.assert_allclose(left + right, 8.0, atol=1e-9)

    def test_alpha_bounds(self):
        for alpha in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ValueError, match="alpha"):
                quantile(unit_forecast(), alpha)

    def test_round_trip_against_erf_grid(self):
        # CDF(quantile(alpha)) == alpha on a fine grid.
        g = unit_forecast(1)
        for alpha in np.linspace(0.001, 0.999, 999):
            z = float(quantile(g, float(alpha))[0])
            assert erf_cdf(z) == pytest.approx(alpha, abs=1e-8)

    def test_cdf_matches_erf(self):
        xs = np.linspace(-6, 6, 201)
        expected = np.array([erf_cdf(x) for x in xs])
        np.testing.assert_allclose(gaussian_cdf(xs), expected, atol=1e-14)


class TestCrpsGaussian:
    def test_center_value(self):
        # With y == mu and unit sigma: 2*pdf(0) - 1/sqrt(pi) = 0.2336949...
        expected = 2.0 / math.sqrt(2.0 * math.pi) - 1.0 / math.sqrt(math.pi)
        assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(expected, abs=1e-12)
        assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.2337, abs=1e-5)

    def test_degenerate_limit_is_absolute_error(self):
        assert crps_gaussian(0.0, 1e-6, 1.0) == pytest.approx(1.0, abs=1e-4)

    @given(st.floats(0.1, 10.0))
    @settings(max_examples=60, deadline=None)
    def test_positive_homogeneity(self, alpha):
        base = crps_gaussian(1.3, 0.7, 2.1)
        scaled = crps_gaussian(alpha * 1.3, alpha * 0.7, alpha * 2.1)
        assert scaled == pytest.approx(alpha * base, rel=1e-10)

    def test_vectorized(self):
        mu = np.array([0.0, 1.0])
        sigma = np.array([1.0, 2.0])
        y = np.array([0.0, 0.5])
        out = crps_gaussian(mu, sigma, y)
        assert out.shape == (2,)
        assert out[0] == pytest.approx(crps_gaussian(0.0, 1.0, 0.0))

    def test_quadrature_oracle(self):
        # Independent check: integrate (CDF(x) - step(x - y))^2 directly,
        # splitting at the step so both pieces are smooth.
        from scipy.integrate import trapezoid

        mu, sigma, y = 0.3, 1.7, -0.9
        lo, hi = mu - 12 * sigma, mu + 12 * sigma
        left = np.linspace(lo, y, 100001)
        right = np.linspace(y, hi, 100001)
        cdf = lambda xs: np.array([erf_cdf((x - mu) / sigma) for x in xs])
        integral = trapezoid(cdf(left) ** 2, left) \
            + trapezoid((1.0 - cdf(right)) ** 2, right)
        assert crps_gaussian(mu, sigma, y) == pytest.approx(integral, rel=1e-7)

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            crps_gaussian(0.0, 0.0, 1.0)


class TestSampleEnsemble:
    def test_law_of_large_numbers(self):
        g = GaussianForecast(np.array([5.0, -2.0]), np.array([3.0, 0.5]))
        draws = sample_ensemble(g, 100_000, seed=42)
        assert draws.shape == (100_000, 2)
        err = np.abs(draws.mean(axis=0) - g.mu)
        assert (err <= 0.01 * g.sigma * 3.3).all()
        assert np.abs(draws.std(axis=0) / g.sigma - 1.0).max() < 0.02

    def test_degenerate_sigma(self):
        g = GaussianForecast(np.full(4, 7.0), np.full(4, 1e-6))
        draws = sample_ensemble(g, 1000, seed=0)
        assert np.abs(draws - 7.0).max() < 1e-5

    def test_seed_determinism(self):
        g = GaussianForecast(np.zeros(3), np.ones(3))
        a = sample_ensemble(g, 50, seed=123)
        b = sample_ensemble(g, 50, seed=123)
        c = sample_ensemble(g, 50, seed=124)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_needs_members(self):
        with pytest.raises(ValueError, match="member"):
            sample_ensemble(unit_forecast(), 0, seed=1)
