"""Calendar-grouped rolling statistics: profile, variance, standard deviation.

The profile at time t is the mean of the observations inside the trailing
window [t - W, t - 1] that fall in the same calendar group as t (same hour
of day, optionally crossed with a weekend flag or the weekday). The rolling
variance averages squared deviations from the per-index profile over the
same window, and the rolling standard deviation is its square root.

Positions with no qualifying history are explicitly undefined: values carry
a boolean mask and undefined slots are never fed into arithmetic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .timeseries import CalendarGrouping, TimeSeries


class ConfigurationError(ValueError):
    """Profile and variance were computed with mismatched settings."""


@dataclass
class StatSeries:
    """A statistic aligned to a source series, with a definedness mask."""

    values: np.ndarray
    defined: np.ndarray


@dataclass
class Profile(StatSeries):
    grouping: CalendarGrouping = CalendarGrouping.HOUR_OF_DAY
    window_days: float = 28.0


@dataclass
class RollingStats:
    """Profile, variance, and std of one series under one grouping."""

    profile: np.ndarray
    variance: np.ndarray
    std: np.ndarray
    profile_defined: np.ndarray
    spread_defined: np.ndarray
    window_days: float
    grouping: CalendarGrouping
    defined_from: int | None

    def __len__(self) -> int:
        return self.profile.size


def _window_steps(ts: TimeSeries, window_days: float) -> int:
    steps = window_days * 86400.0 / ts.step_seconds
    if steps != int(steps) or steps < 1:
        raise ValueError(
            f"window of {window_days} days is not a whole number of steps"
        )
    return int(steps)


def _check_window_covers_cycle(ts: TimeSeries, grouping, window_days: float) -> None:
    window_hours = window_days * 24.0
    if window_hours < grouping.cycle_hours:
        raise ValueError(
            f"window of {window_days} days is shorter than one "
            f"{grouping.value} cycle ({grouping.cycle_hours} h)"
        )


def _group_positions(ts: TimeSeries, grouping: CalendarGrouping):
    gid = grouping.group_ids(ts.timestamps)
    for g in np.unique(gid):
        yield np.flatnonzero(gid == g)


def _windowed_sums(pos: np.ndarray, contributions: np.ndarray,
                   counted: np.ndarray, window_steps: int):
    """Sum ``contributions`` over each member's trailing window.

    ``pos`` holds the sorted series indices of one calendar group;
    ``counted`` marks which members may contribute. Returns per-member sums
    and integer counts; sums are accumulated left-to-right over at most one
    window's worth of values so rounding stays independent of series length.
    """
    lo = np.searchsorted(pos, pos - window_steps, side="left")
    hi = np.searchsorted(pos, pos, side="left")
    sums = np.zeros(pos.size, dtype=np.float64)
    # Exact integer counts via cumulative sums.
    csum_counts = np.concatenate([[0], np.cumsum(counted.astype(np.int64))])
    counts = csum_counts[hi] - csum_counts[lo]
    nonempty = hi > lo
    if nonempty.any():
        masked = np.where(counted, contributions, 0.0)
        pairs = np.column_stack([lo[nonempty], hi[nonempty]]).ravel()
        segment_sums = np.add.reduceat(masked, pairs)[::2]
        # reduceat yields masked[a] for a zero-length trailing segment; those
        # positions were filtered out by ``nonempty`` above.
        sums[nonempty] = segment_sums
    return sums, counts


def rolling_average(ts: TimeSeries, grouping: CalendarGrouping,
                    window_days: float = 28.0) -> Profile:
    """Rolling mean of same-group observations in the trailing window.

    Positions whose window contains no same-group observation are flagged
    undefined rather than erred or zero-filled.
    """
    _check_window_covers_cycle(ts, grouping, window_days)
    window_steps = _window_steps(ts, window_days)
    n = len(ts)
    values = np.zeros(n, dtype=np.float64)
    defined = np.zeros(n, dtype=bool)
    for pos in _group_positions(ts, grouping):
        sums, counts = _windowed_sums(pos, ts.values[pos],
                                      np.ones(pos.size, dtype=bool),
                                      window_steps)
        ok = counts > 0
        values[pos[ok]] = sums[ok] / counts[ok]
        defined[pos[ok]] = True
    return Profile(values=values, defined=defined, grouping=grouping,
                   window_days=window_days)


def rolling_variance(ts: TimeSeries, profile: Profile,
                     grouping: CalendarGrouping,
                     window_days: float = 28.0) -> StatSeries:
    """Rolling mean of squared deviations from the per-index profile.

    Deviations are taken against the profile at each historical index, not
    against the profile at the position being computed. Historical indices
    whose own profile is undefined do not contribute.
    """
    if profile.grouping is not grouping or profile.window_days != window_days:
        raise ConfigurationError(
            "profile was computed with a different grouping or window"
        )
    window_steps = _window_steps(ts, window_days)
    n = len(ts)
    values = np.zeros(n, dtype=np.float64)
    defined = np.zeros(n, dtype=bool)
    for pos in _group_positions(ts, grouping):
        deviations_sq = (ts.values[pos] - profile.values[pos]) ** 2
        sums, counts = _windowed_sums(pos, deviations_sq,
                                      profile.defined[pos], window_steps)
        ok = counts > 0
        values[pos[ok]] = sums[ok] / counts[ok]
        defined[pos[ok]] = True
    return StatSeries(values=values, defined=defined)


def rolling_std(variance: StatSeries) -> StatSeries:
    """Elementwise square root of the rolling variance; undefined propagates."""
    vals = variance.values[variance.defined]
    if vals.size and vals.min() < 0:
        raise ValueError("negative rolling variance: internal invariant violated")
    out = np.zeros_like(variance.values)
    out[variance.defined] = np.sqrt(vals)
    return StatSeries(values=out, defined=variance.defined.copy())


def compute_rolling_stats(ts: TimeSeries, grouping: CalendarGrouping,
                          window_days: float = 28.0) -> RollingStats:
    """Profile, variance, and std bundled with their definedness masks."""
    profile = rolling_average(ts, grouping, window_days)
    variance = rolling_variance(ts, profile, grouping, window_days)
    std = rolling_std(variance)
    both = profile.defined & variance.defined
    defined_from = int(np.argmax(both)) if both.any() else None
    return RollingStats(
        profile=profile.values,
        variance=variance.values,
        std=std.values,
        profile_defined=profile.defined,
        spread_defined=variance.defined,
        window_days=window_days,
        grouping=grouping,
        defined_from=defined_from,
    )


def export_stats_csv(stats: RollingStats, ts: TimeSeries, path) -> None:
    """Write (timestamp, profile, variance, std) rows; undefined cells empty."""
    stamps = ts.timestamps
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "profile", "variance", "std"])
        for i in range(len(stats)):
            p = repr(float(stats.profile[i])) if stats.profile_defined[i] else ""
            if stats.spread_defined[i]:
                v = repr(float(stats.variance[i]))
                s = repr(float(stats.std[i]))
            else:
                v = s = ""
            writer.writerow([str(stamps[i]), p, v, s])
