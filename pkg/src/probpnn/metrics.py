"""Probabilistic and deterministic forecast evaluation.

All normalized metrics divide by the maximum of the series under
evaluation, so scores are comparable across series of different magnitude.
Lower is better for every metric here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.stats import rankdata

#: Quantile levels the pinball loss averages over, sorted descending.
PINBALL_QUANTILES: tuple[float, ...] = (
    0.99, 0.98, 0.97, 0.96, 0.95,
    0.90, 0.85, 0.80, 0.75, 0.70, 0.65, 0.60, 0.55, 0.50,
    0.45, 0.40, 0.35, 0.30, 0.25, 0.20, 0.15, 0.10, 0.05,
    0.04, 0.03, 0.02, 0.01,
)

#: Nested (lower, upper) quantile pairs for coverage evaluation.
COVERAGE_TUPLES: tuple[tuple[float, float], ...] = (
    (0.05, 0.95), (0.10, 0.90), (0.15, 0.85), (0.20, 0.80), (0.25, 0.75),
    (0.30, 0.70), (0.35, 0.65), (0.40, 0.60), (0.45, 0.55),
)


@dataclass
class QuantileSets:
    """The quantile levels used by the pinball and coverage metrics."""

    pinball: tuple[float, ...] = PINBALL_QUANTILES
    coverage: tuple[tuple[float, float], ...] = COVERAGE_TUPLES

    def __post_init__(self):
        if list(self.pinball) != sorted(self.pinball, reverse=True):
            raise ValueError("pinball quantiles must be sorted descending")
        for lower, upper in self.coverage:
            if not upper > lower:
                raise ValueError(f"coverage tuple ({lower}, {upper}) is not ordered")


def ncrps(ensemble: np.ndarray, y: np.ndarray, y_max: float) -> float:
    """Normalized CRPS of an ensemble forecast.

    ``ensemble`` is [n_members, n_steps]. Per step, the estimator is
    mean|X_i - y| - (1/(2 n^2)) * sum_ij |X_i - X_j|; the result is averaged
    over steps and divided by ``y_max``.
    """
    ensemble = np.asarray(ensemble, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_max <= 0:
        raise ValueError("y_max must be positive")
    if ensemble.ndim != 2 or ensemble.shape[0] < 2:
        raise ValueError("ensemble must be [n_members >= 2, n_steps]")
    n = ensemble.shape[0]
    term_err = np.mean(np.abs(ensemble - y[None, :]), axis=0)
    ordered = np.sort(ensemble, axis=0)
    coeff = 2.0 * np.arange(n) - n + 1.0
    term_spread = (coeff[:, None] * ordered).sum(axis=0) / (n * n)
    return float(np.mean(term_err - term_spread) / y_max)


def pinball_loss(forecast: np.ndarray, y: np.ndarray, alpha: float) -> float:
    """Average pinball loss of one quantile curve."""
    under = y >= forecast
    per_step = np.where(under, (y - forecast) * alpha,
                        (forecast - y) * (1.0 - alpha))
    return float(per_step.mean())


def npl(quantile_forecasts: Mapping[float, np.ndarray], y: np.ndarray,
        y_max: float, quantiles: tuple[float, ...] = PINBALL_QUANTILES) -> float:
    """Normalized pinball loss averaged over the full quantile set."""
    if y_max <= 0:
        raise ValueError("y_max must be positive")
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    for alpha in quantiles:
        if alpha not in quantile_forecasts:
            raise KeyError(f"missing quantile forecast for alpha={alpha}")
        total += pinball_loss(np.asarray(quantile_forecasts[alpha]), y, alpha)
    return total / (len(quantiles) * y_max)


def coverage_rate(lower: np.ndarray, upper: np.ndarray, y: np.ndarray) -> float:
    """Fraction of observations strictly inside the (lower, upper) band."""
    lower = np.asarray(lower)
    upper = np.asarray(upper)
    y = np.asarray(y)
    if not (lower < upper).all():
        raise ValueError("lower band must lie strictly below upper band")
    inside = (lower < y) & (y < upper)
    return float(inside.mean())


def dicr(quantile_forecasts: Mapping[float, np.ndarray], y: np.ndarray,
         tuples: tuple[tuple[float, float], ...] = COVERAGE_TUPLES) -> float:
    """Distance to the ideal coverage rate, summed over nested bands.

    An ideal forecast covers a (lower, upper) band's observations with
    frequency upper - lower; this sums the absolute deviation from that
    target across all configured bands.
    """
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    for lower_q, upper_q in tuples:
        for needed in (lower_q, upper_q):
            if needed not in quantile_forecasts:
                raise KeyError(f"missing quantile forecast for alpha={needed}")
        rate = coverage_rate(np.asarray(quantile_forecasts[lower_q]),
                             np.asarray(quantile_forecasts[upper_q]), y)
        total += abs(rate - (upper_q - lower_q))
    return total


def nmae(mu: np.ndarray, y: np.ndarray, y_max: float) -> float:
    """Normalized mean absolute error of the median forecast."""
    if y_max <= 0:
        raise ValueError("y_max must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.abs(mu - y)) / y_max)


def rank_methods(per_series_scores: np.ndarray) -> np.ndarray:
    """Average rank of each method over all series.

    ``per_series_scores`` is [n_series, n_methods], lower scores are better.
    Within each series methods are ranked ascending; ties share the average
    of the ranks they span.
    """
    scores = np.asarray(per_series_scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("expected a [n_series, n_methods] matrix")
    if np.isnan(scores).any():
        raise ValueError("scores must not contain NaN")
    ranks = rankdata(scores, method="average", axis=1)
    return ranks.mean(axis=0)


RANKED_METRICS = ("ncrps", "npl", "dicr", "nmae")


@dataclass
class EvaluationReport:
    """Per-series metric map plus per-method averages and average ranks."""

    methods: list[str]
    per_series: dict[str, dict[str, dict[str, float]]]
    averages: dict[str, dict[str, float]] = field(default_factory=dict)
    average_ranks: dict[str, dict[str, float]] = field(default_factory=dict)
    per_series_ranks: dict[str, dict[str, dict[str, float]]] = field(
        default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "per_series": self.per_series,
            "averages": self.averages,
            "average_ranks": self.average_ranks,
            "per_series_ranks": self.per_series_ranks,
        }


def build_report(per_series: dict[str, dict[str, dict[str, float]]],
                 methods: list[str]) -> EvaluationReport:
    """Aggregate per-series metric dicts into averages and ranks.

    ``per_series`` maps series name -> method -> metric -> value and must be
    complete: every method needs a value for every ranked metric.
    """
    series_names = sorted(per_series)
    report = EvaluationReport(methods=list(methods), per_series=per_series)

    metric_names = RANKED_METRICS + ("training_seconds",)
    for method in methods:
        report.averages[method] = {
            metric: float(np.mean([per_series[s][method][metric]
                                   for s in series_names]))
            for metric in metric_names
        }

    for metric in RANKED_METRICS:
        table = np.array([[per_series[s][m][metric] for m in methods]
                          for s in series_names])
        avg = rank_methods(table)
        report.average_ranks[metric] = {
            m: float(r) for m, r in zip(methods, avg)}
        per_series_rank = rankdata(table, method="average", axis=1)
        report.per_series_ranks[metric] = {
            s: {m: float(r) for m, r in zip(methods, per_series_rank[i])}
            for i, s in enumerate(series_names)
        }
    return report
