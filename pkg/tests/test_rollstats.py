"""Rolling statistics against literal brute-force oracles."""

from datetime import datetime, timedelta

import numpy as np
import pytest

from probpnn.rollstats import (ConfigurationError, RollingStats, StatSeries,
                               compute_rolling_stats, export_stats_csv,
                               rolling_average, rolling_std, rolling_variance)
from probpnn.timeseries import CalendarGrouping, TimeSeries

MONDAY = datetime(2021, 1, 4)


def hourly(values, start=MONDAY):
    return TimeSeries(start=start, step=timedelta(hours=1),
                      values=np.asarray(values, dtype=float))


def brute_force_profile(ts, grouping, window_days):
    """Direct evaluation: mean of same-group values in [t - W, t - 1]."""
    gid = grouping.group_ids(ts.timestamps)
    window = int(window_days * 24)
    n = len(ts)
    values = np.zeros(n)
    defined = np.zeros(n, dtype=bool)
    for t in range(n):
        idx = np.arange(max(0, t - window), t)
        idx = idx[gid[idx] == gid[t]]
        if idx.size:
            values[t] = ts.values[idx].mean()
            defined[t] = True
    return values, defined


def brute_force_variance(ts, grouping, window_days, profile, p_defined):
    """Mean squared deviation from the per-index profile, same filtering."""
    gid = grouping.group_ids(ts.timestamps)
    window = int(window_days * 24)
    n = len(ts)
    values = np.zeros(n)
    defined = np.zeros(n, dtype=bool)
    for t in range(n):
        idx = np.arange(max(0, t - window), t)
        idx = idx[(gid[idx] == gid[t]) & p_defined[idx]]
        if idx.size:
            values[t] = ((ts.values[idx] - profile[idx]) ** 2).mean()
            defined[t] = True
    return values, defined


class TestRollingAverage:
    def test_constant_series(self):
        ts = hourly(np.full(24 * 10, 5.0))
        profile = rolling_average(ts, CalendarGrouping.HOUR_OF_DAY, 2)
        assert profile.defined[24:].all()
        assert not profile.defined[:24].any()
        assert np.array_equal(profile.values[profile.defined],
                              np.full(24 * 9, 5.0))

    def test_hand_case_two_days(self):
        # Hour 12 sees 10 on day 1 and 14 on day 2; the day-3 profile is 12.
        values = np.zeros(24 * 3)
        values[12] = 10.0
        values[36] = 14.0
        ts = hourly(np.concatenate([values, [0.0] * 13]))
        profile = rolling_average(ts, CalendarGrouping.HOUR_OF_DAY, 2)
        assert profile.defined[60]
        assert profile.values[60] == 12.0

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("grouping", list(CalendarGrouping))
    def test_matches_brute_force(self, seed, grouping):
        rng = np.random.default_rng(seed)
        ts = hourly(rng.uniform(0.0, 200.0, size=6 * 7 * 24))
        window_days = 28 if grouping.cycle_hours > 24 else 7
        profile = rolling_average(ts, grouping, window_days)
        expected, expected_defined = brute_force_profile(ts, grouping,
                                                         window_days)
        assert np.array_equal(profile.defined, expected_defined)
        diff = np.abs(profile.values - expected)[profile.defined]
        assert diff.max() <= 1e-12

    def test_window_shorter_than_cycle_rejected(self):
        ts = hourly(np.ones(24 * 30))
        with pytest.raises(ValueError, match="shorter than one"):
            rolling_average(ts, CalendarGrouping.HOUR_WEEKEND, 2)

    def test_shift_equivariance(self):
        rng = np.random.default_rng(11)
        base = rng.normal(size=5 * 7 * 24)
        cycle = 24
        window_days = 2
        prefix = rng.normal(size=cycle)
        ts_old = hourly(base)
        ts_new = hourly(np.concatenate([prefix, base]),
                        start=MONDAY - timedelta(hours=cycle))
        p_old = rolling_average(ts_old, CalendarGrouping.HOUR_OF_DAY, window_days)
        p_new = rolling_average(ts_new, CalendarGrouping.HOUR_OF_DAY, window_days)
        # Once the window no longer touches the prepended cycle, outputs
        # coincide exactly at shifted indices.
        safe_from = cycle + window_days * 24
        for t in range(safe_from, len(ts_new)):
            assert p_new.defined[t] == p_old.defined[t - cycle]
            if p_new.defined[t]:
                assert p_new.values[t] == p_old.values[t - cycle]

    def test_scale_equivariance(self):
        rng = np.random.default_rng(12)
        values = rng.uniform(1.0, 10.0, size=4 * 7 * 24)
        stats1 = compute_rolling_stats(hourly(values),
                                       CalendarGrouping.HOUR_OF_DAY, 7)
        stats2 = compute_rolling_stats(hourly(2.0 * values),
                                       CalendarGrouping.HOUR_OF_DAY, 7)
        m = stats1.profile_defined & stats1.spread_defined
        # Power-of-two scaling is exact in binary floating point.
        assert np.array_equal(stats2.profile[m], 2.0 * stats1.profile[m])
        assert np.array_equal(stats2.variance[m], 4.0 * stats1.variance[m])
        stats3 = compute_rolling_stats(hourly(3.7 * values),
                                       CalendarGrouping.HOUR_OF_DAY, 7)
        np.testing.assert_allclose(stats3.profile[m], 3.7 * stats1.profile[m],
                                   rtol=1e-12)
        np.testing.assert_allclose(stats3.variance[m],
                                   3.7**2 * stats1.variance[m], rtol=1e-12)


class TestRollingVariance:
    def test_constant_series(self):
        ts = hourly(np.full(24 * 8, 5.0))
        profile = rolling_average(ts, CalendarGrouping.HOUR_OF_DAY, 2)
        variance = rolling_variance(ts, profile, CalendarGrouping.HOUR_OF_DAY, 2)
        assert np.array_equal(variance.values[variance.defined],
                              np.zeros(variance.defined.sum()))

    def test_constant_deviation_squared(self):
        # Build a series where every value sits exactly 2 above its own
        # profile; the rolling variance must be exactly 4. This also proves
        # deviations use the profile at the historical index, which varies.
        grouping = CalendarGrouping.HOUR_OF_DAY
        window_days = 2
        n = 24 * 6
        values = np.zeros(n)
        rng = np.random.default_rng(0)
        # Dyadic seed values keep every mean and +2 offset exact in floats.
        values[:24] = rng.integers(40, 80, size=24) * 0.25
        for t in range(24, n):
            prev = [i for i in range(max(0, t - 48), t) if i % 24 == t % 24]
            profile_t = np.asarray([values[i] for i in prev]).mean()
            values[t] = profile_t + 2.0
        ts = hourly(values)
        profile = rolling_average(ts, grouping, window_days)
        variance = rolling_variance(ts, profile, grouping, window_days)
        assert variance.defined[48:].all()
        assert np.array_equal(variance.values[48:], np.full(n - 48, 4.0))
        # The profile genuinely varies over history, so a wrong
        # implementation using the profile at t would not give 4.
        assert np.unique(profile.values[profile.defined]).size > 24

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(100 + seed)
        ts = hourly(rng.normal(50.0, 10.0, size=6 * 7 * 24))
        grouping = CalendarGrouping.HOUR_WEEKEND
        profile = rolling_average(ts, grouping, 28)
        variance = rolling_variance(ts, profile, grouping, 28)
        p_exp, p_def = brute_force_profile(ts, grouping, 28)
        v_exp, v_def = brute_force_variance(ts, grouping, 28, p_exp, p_def)
        assert np.array_equal(variance.defined, v_def)
        diff = np.abs(variance.values - v_exp)[v_def]
        assert diff.max() <= 1e-12

    def test_mismatched_settings_rejected(self):
        ts = hourly(np.ones(24 * 40))
        profile = rolling_average(ts, CalendarGrouping.HOUR_OF_DAY, 7)
        with pytest.raises(ConfigurationError):
            rolling_variance(ts, profile, CalendarGrouping.HOUR_WEEKEND, 7)
        with pytest.raises(ConfigurationError):
            rolling_variance(ts, profile, CalendarGrouping.HOUR_OF_DAY, 28)


class TestRollingStd:
    def test_square_root(self):
        variance = StatSeries(values=np.array([4.0, 0.0, 9.0]),
                              defined=np.array([True, True, True]))
        std = rolling_std(variance)
        assert np.array_equal(std.values, [2.0, 0.0, 3.0])

    def test_undefined_propagates(self):
        variance = StatSeries(values=np.array([4.0, 123.0]),
                              defined=np.array([True, False]))
        std = rolling_std(variance)
        assert std.defined.tolist() == [True, False]
        assert std.values[0] == 2.0

    def test_negative_is_invariant_violation(self):
        variance = StatSeries(values=np.array([-1.0]),
                              defined=np.array([True]))
        with pytest.raises(ValueError, match="invariant"):
            rolling_std(variance)


class TestRollingStatsBundle:
    def test_invariants(self):
        rng = np.random.default_rng(5)
        ts = hourly(rng.uniform(0, 100, size=6 * 7 * 24))
        stats = compute_rolling_stats(ts, CalendarGrouping.HOUR_WEEKEND, 28)
        m = stats.spread_defined
        assert (stats.variance[m] >= 0).all()
        assert np.abs(stats.std[m] - np.sqrt(stats.variance[m])).max() <= 1e-12
        assert stats.defined_from is not None
        assert not stats.profile_defined[0]

    def test_export_csv(self, tmp_path):
        ts = hourly(np.arange(96.0))
        stats = compute_rolling_stats(ts, CalendarGrouping.HOUR_OF_DAY, 2)
        path = tmp_path / "stats.csv"
        export_stats_csv(stats, ts, path)
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "timestamp,profile,variance,std"
        assert len(lines) == len(ts) + 1
        # Undefined leading positions export as empty cells.
        assert lines[1].endswith(",,,")
        first_defined = stats.defined_from
        cells = lines[1 + first_defined].split(",")
        assert float(cells[1]) == stats.profile[first_defined]
