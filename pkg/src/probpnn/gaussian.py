"""Gaussian forecast utilities: quantiles, closed-form CRPS, sampling.

Whatever a forecaster produces (an expected error in std or variance units,
or a PSF baseline) is first converted to a GaussianForecast with strictly
positive standard deviations; quantile curves and ensembles derive from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .model import VARIANT_SIGMA, VARIANT_SIGMA_SQUARED, ProbabilisticForecast
from .psf import PSFForecast

SIGMA_FLOOR = 1e-6

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


@dataclass
class GaussianForecast:
    """Per-step normal distributions: mean and standard deviation > 0."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma must share a shape")
        if (self.sigma <= 0).any():
            raise ValueError("sigma must be strictly positive")


def to_gaussian(forecast) -> GaussianForecast:
    """Convert any supported forecast into Gaussian parameters.

    Expected errors in variance units are square-rooted; PSF standard
    deviations pass through with a tiny positivity floor so degenerate
    (zero-spread) steps still define a proper distribution.
    """
    if isinstance(forecast, ProbabilisticForecast):
        if (forecast.err <= 0).any():
            raise ValueError("expected error must be positive after flooring")
        if forecast.variant == VARIANT_SIGMA:
            return GaussianForecast(forecast.mu.copy(), forecast.err.copy())
        if forecast.variant == VARIANT_SIGMA_SQUARED:
            return GaussianForecast(forecast.mu.copy(), np.sqrt(forecast.err))
        raise ValueError(f"unknown variant {forecast.variant!r}")
    if isinstance(forecast, PSFForecast):
        if (forecast.sigma < 0).any():
            raise ValueError("PSF sigma must be non-negative")
        return GaussianForecast(forecast.mu.copy(),
                                np.maximum(forecast.sigma, SIGMA_FLOOR))
    raise TypeError(f"unsupported forecast type {type(forecast).__name__}")


def quantile(g: GaussianForecast, alpha: float) -> np.ndarray:
    """The alpha-quantile curve, mu + sigma * probit(alpha)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return g.mu + g.sigma * ndtri(alpha)


def gaussian_cdf(x):
    return ndtr(x)


def crps_gaussian(mu, sigma, y):
    """Closed-form continuous ranked probability score of a Gaussian.

    Vectorized over same-shape inputs; scalar inputs yield a scalar.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if (sigma <= 0).any():
        raise ValueError("sigma must be strictly positive")
    z = (y - mu) / sigma
    density = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    out = sigma * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * density - _INV_SQRT_PI)
    return float(out) if out.ndim == 0 else out


def sample_ensemble(g: GaussianForecast, n: int, seed) -> np.ndarray:
    """Draw an [n, horizon] matrix of independent Gaussians, seeded."""
    if n < 1:
        raise ValueError("need at least one ensemble member")
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((n, g.mu.size))
    return g.mu[None, :] + g.sigma[None, :] * draws
