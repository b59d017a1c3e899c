"""Profile-standard-deviation forecast: the untrained statistical baseline.

The rolling profile and rolling standard deviation at the forecast steps are
read off directly as the mean and spread of a Gaussian. No parameters, no
training, so its training time is always reported as zero seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rollstats import RollingStats


class UndefinedStatisticError(ValueError):
    """A forecast step falls where the rolling statistics are undefined."""


@dataclass
class PSFForecast:
    """Gaussian parameters per forecast step; sigma is non-negative."""

    mu: np.ndarray
    sigma: np.ndarray


def psf_forecast(stats: RollingStats, origin_index: int,
                 horizon: int = 24) -> PSFForecast:
    """Read the rolling statistics over [origin+1, origin+horizon].

    ``origin_index`` is the index of the last observed step in the series
    the statistics were computed from.
    """
    first = origin_index + 1
    last = first + horizon
    if first < 0 or last > len(stats):
        raise UndefinedStatisticError(
            f"forecast range [{first}, {last}) is outside the statistics")
    for step in range(horizon):
        i = first + step
        if not (stats.profile_defined[i] and stats.spread_defined[i]):
            raise UndefinedStatisticError(
                f"rolling statistic undefined at forecast step {step + 1} "
                f"(series index {i})")
    return PSFForecast(
        mu=stats.profile[first:last].copy(),
        sigma=stats.std[first:last].copy(),
    )
