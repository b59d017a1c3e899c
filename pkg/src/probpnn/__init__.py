"""Probabilistic time-series forecasting with calendar-aware statistics.

The package combines calendar-grouped rolling statistics with a small
convolutional network into per-step Gaussian forecasts, ships the
profile-standard-deviation baseline, and evaluates everything with a
probabilistic metrics suite (nCRPS, nPL, DICR, nMAE, ranks).
"""

from .gaussian import GaussianForecast, crps_gaussian, quantile, sample_ensemble, to_gaussian
from .metrics import COVERAGE_TUPLES, PINBALL_QUANTILES, coverage_rate, dicr, ncrps, nmae, npl, rank_methods
from .model import (ProbPNNConfig, ProbPNNModel, ProbabilisticForecast,
                    adaptive_weights, build, loss_l1, loss_l2, loss_total,
                    predict, train)
from .psf import PSFForecast, psf_forecast
from .rollstats import RollingStats, compute_rolling_stats, rolling_average, rolling_std, rolling_variance
from .timeseries import (CalendarGrouping, ExogenousFeatures, SampleWindow,
                         TimeSeries, encode_exogenous, load_csv, make_windows,
                         resample_hourly)

__version__ = "0.1.0"
