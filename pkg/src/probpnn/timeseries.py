"""Time-series ingestion, calendar features, and training-window construction.

Everything here treats timestamps as naive local wall-clock time: no timezone
conversion and no DST adjustment. Series must be gap-free with a constant
step; ingestion rejects anything else instead of imputing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .rollstats import RollingStats

DATASET_STYLES = ("electricity", "traffic")


class IngestionError(ValueError):
    """Raised when a CSV cannot be turned into a valid series."""


@dataclass
class TimeSeries:
    """Univariate series on a regular time grid.

    Attributes:
        start: timestamp of the first value (naive wall clock).
        step: spacing between consecutive values; strictly positive.
        values: float64 array of finite observations, length >= 1.
        name: identifier used in reports and file names.
    """

    start: datetime
    step: timedelta
    values: np.ndarray
    name: str = "series"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValueError("values must be a non-empty 1-d array")
        if not np.isfinite(self.values).all():
            raise ValueError("values must be finite")
        if self.step <= timedelta(0):
            raise ValueError("step must be strictly positive")

    def __len__(self) -> int:
        return self.values.size

    @property
    def step_seconds(self) -> int:
        total = self.step.total_seconds()
        if total != int(total):
            raise ValueError("sub-second steps are not supported")
        return int(total)

    @property
    def timestamps(self) -> np.ndarray:
        """All timestamps as a datetime64[s] array."""
        t0 = np.datetime64(self.start, "s")
        return t0 + np.arange(len(self)) * np.timedelta64(self.step_seconds, "s")

    def timestamp(self, index: int) -> datetime:
        return self.start + index * self.step

    def index_of(self, when: datetime) -> int:
        """Index of an exact grid timestamp; raises if off-grid or outside."""
        delta = (when - self.start).total_seconds()
        steps, rem = divmod(delta, self.step_seconds)
        if rem != 0:
            raise ValueError(f"{when} is not on the series grid")
        idx = int(steps)
        if not 0 <= idx < len(self):
            raise ValueError(f"{when} is outside the series range")
        return idx


def _hours(timestamps: np.ndarray) -> np.ndarray:
    return (timestamps.astype("M8[h]") - timestamps.astype("M8[D]")).astype(np.int64)


def _weekdays(timestamps: np.ndarray) -> np.ndarray:
    # 1970-01-01 was a Thursday; Monday == 0.
    return (timestamps.astype("M8[D]").astype(np.int64) + 3) % 7


def _month_index(timestamps: np.ndarray) -> np.ndarray:
    return (timestamps.astype("M8[M]") - timestamps.astype("M8[Y]")).astype(np.int64)


class CalendarGrouping(Enum):
    """Equivalence classes of timestamps that share a statistical profile.

    Two timestamps belong to the same group exactly when ``group_ids`` maps
    them to the same integer label.
    """

    HOUR_OF_DAY = "hour_of_day"
    HOUR_WEEKEND = "hour_weekend"
    HOUR_DAY_OF_WEEK = "hour_day_of_week"

    def group_ids(self, timestamps: np.ndarray) -> np.ndarray:
        hours = _hours(timestamps)
        if self is CalendarGrouping.HOUR_OF_DAY:
            return hours
        if self is CalendarGrouping.HOUR_WEEKEND:
            weekend = (_weekdays(timestamps) >= 5).astype(np.int64)
            return hours + 24 * weekend
        weekday = _weekdays(timestamps)
        return hours + 24 * weekday

    @property
    def cycle_hours(self) -> int:
        """Shortest period after which group labels repeat."""
        return 24 if self is CalendarGrouping.HOUR_OF_DAY else 168


@dataclass
class ExogenousFeatures:
    """Per-timestep calendar encodings, one row per channel.

    ``matrix`` has shape [n_channels, n_steps] and is index-aligned with the
    series it was derived from.
    """

    channels: list[str]
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape[0] != len(self.channels):
            raise ValueError("one matrix row per channel required")

    @property
    def n_steps(self) -> int:
        return self.matrix.shape[1]


def encode_exogenous(ts: TimeSeries, style: str) -> ExogenousFeatures:
    """Encode calendar information as model input channels.

    The ``electricity`` style emits sin/cos of the hour of day, sin/cos of
    the month of year, and a weekend flag; the ``traffic`` style omits the
    month pair. Hour angle is 2*pi*hour/24, month angle 2*pi*month/12 with
    January mapped to zero.
    """
    if style not in DATASET_STYLES:
        raise ValueError(f"unknown dataset style {style!r}")
    stamps = ts.timestamps
    hour_angle = 2.0 * np.pi * _hours(stamps) / 24.0
    weekend = (_weekdays(stamps) >= 5).astype(np.float64)
    channels = ["sin_hour", "cos_hour"]
    rows = [np.sin(hour_angle), np.cos(hour_angle)]
    if style == "electricity":
        month_angle = 2.0 * np.pi * _month_index(stamps) / 12.0
        channels += ["sin_month", "cos_month"]
        rows += [np.sin(month_angle), np.cos(month_angle)]
    channels.append("weekend_flag")
    rows.append(weekend)
    return ExogenousFeatures(channels, np.vstack(rows))


def load_csv(path, column: str, timestamp_column: str = "timestamp") -> TimeSeries:
    """Read one value column from a CSV file into a validated TimeSeries.

    The file needs a header row, ISO-8601 timestamps, and at least two data
    rows (the step is inferred from them). Rows may arrive unsorted; after
    sorting, duplicated timestamps and gaps are rejected with the 1-based
    data-row number of the offending entry.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        for needed in (timestamp_column, column):
            if needed not in header:
                raise IngestionError(f"{path}: missing column {needed!r}")
        t_col = header.index(timestamp_column)
        v_col = header.index(column)

        rows: list[tuple[datetime, float, int]] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                stamp = datetime.fromisoformat(row[t_col].strip())
            except (ValueError, IndexError):
                raise IngestionError(
                    f"{path}: cannot parse timestamp at row {row_no}"
                ) from None
            try:
                value = float(row[v_col].strip())
            except (ValueError, IndexError):
                raise IngestionError(
                    f"{path}: cannot parse value at row {row_no}"
                ) from None
            if not np.isfinite(value):
                raise IngestionError(f"{path}: non-finite value at row {row_no}")
            rows.append((stamp, value, row_no))

    if len(rows) < 2:
        raise IngestionError(f"{path}: need at least 2 data rows to infer the step")
    rows.sort(key=lambda r: r[0])

    step = rows[1][0] - rows[0][0]
    if step <= timedelta(0):
        raise IngestionError(
            f"{path}: duplicate timestamp at row {max(rows[0][2], rows[1][2])}"
        )
    for prev, cur in zip(rows, rows[1:]):
        gap = cur[0] - prev[0]
        if gap == timedelta(0):
            raise IngestionError(
                f"{path}: duplicate timestamp at row {max(prev[2], cur[2])}"
            )
        if gap != step:
            raise IngestionError(
                f"{path}: non-constant step at row {cur[2]} "
                f"(expected {step}, got {gap})"
            )

    values = np.array([r[1] for r in rows], dtype=np.float64)
    name = column
    return TimeSeries(start=rows[0][0], step=step, values=values, name=name)


def resample_hourly(ts: TimeSeries, agg: str = "mean") -> TimeSeries:
    """Aggregate a sub-hourly series to one value per hour.

    Each output value is the mean or sum of the input values whose
    timestamps fall inside that hour; the output is labeled with the start
    of the hour. Partial hours at either end are dropped.
    """
    if agg not in ("mean", "sum"):
        raise ValueError(f"agg must be 'mean' or 'sum', got {agg!r}")
    step_sec = ts.step_seconds
    if step_sec > 3600 or 3600 % step_sec != 0:
        raise ValueError(f"step {ts.step} does not divide one hour")
    per_hour = 3600 // step_sec

    epoch_sec = ts.timestamps.astype("M8[s]").astype(np.int64)
    bucket = epoch_sec // 3600
    # Buckets are contiguous because the input grid has no gaps; only the
    # first and last can be partially covered.
    first, last = bucket[0], bucket[-1]
    counts = np.bincount((bucket - first).astype(np.intp))
    keep_from = 0 if counts[0] == per_hour else int(counts[0])
    keep_to = len(ts) if counts[-1] == per_hour else len(ts) - int(counts[-1])
    kept = ts.values[keep_from:keep_to]
    if kept.size == 0:
        raise ValueError("series too short to cover one full hour")
    grouped = kept.reshape(-1, per_hour)
    out = grouped.sum(axis=1) if agg == "sum" else grouped.mean(axis=1)

    start_bucket = bucket[keep_from]
    start = datetime(1970, 1, 1) + timedelta(seconds=int(start_bucket) * 3600)
    return TimeSeries(start=start, step=timedelta(hours=1), values=out, name=ts.name)


@dataclass
class SampleWindow:
    """All model inputs and the target for one forecast origin.

    The origin is the index of the last observed step; targets cover the
    ``horizon`` steps immediately after it. Slices are index-aligned to the
    source series, and ``spread_kind`` says whether ``stats_spread`` holds
    rolling standard deviations or rolling variances.
    """

    origin_index: int
    origin_timestamp: np.datetime64
    history: np.ndarray
    noise_history: np.ndarray
    trend: np.ndarray
    exo: np.ndarray
    stats_profile: np.ndarray
    stats_spread: np.ndarray
    spread_kind: str
    target: np.ndarray


@dataclass
class WindowSet:
    """Result of window construction plus skip diagnostics."""

    windows: list[SampleWindow] = field(default_factory=list)
    skipped: int = 0
    diagnostic: str | None = None

    def __len__(self) -> int:
        return len(self.windows)


def make_windows(
    ts: TimeSeries,
    stats: "RollingStats",
    exo: ExogenousFeatures,
    history_steps: int = 36,
    horizon: int = 24,
    periodicity: int = 168,
    trend_depth: int = 3,
    spread: str = "std",
    stride: int = 1,
) -> WindowSet:
    """Build forecast windows at every valid origin.

    A candidate origin ``t`` needs the full history slice, all trend lags
    (multiples of ``periodicity`` up to ``trend_depth`` behind each forecast
    step), and the target inside the series; candidates whose rolling
    statistics are undefined anywhere on the history or horizon slice are
    skipped and counted. ``stride`` thins the candidate grid; 1 keeps every
    origin.

    Because every calendar grouping here repeats no faster than daily, the
    statistics attached to the horizon only ever draw on observations at or
    before the origin as long as ``horizon`` does not exceed 24 steps.
    """
    if spread not in ("std", "variance"):
        raise ValueError(f"spread must be 'std' or 'variance', got {spread!r}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = len(ts)
    if exo.n_steps != n:
        raise ValueError("exogenous features are not aligned with the series")
    if len(stats.profile) != n:
        raise ValueError("rolling statistics are not aligned with the series")

    first_origin = max(periodicity * trend_depth, history_steps) - 1
    last_origin = n - 1 - horizon
    if last_origin < first_origin:
        need = max(periodicity * trend_depth, history_steps) + horizon
        return WindowSet(
            diagnostic=f"series shorter than minimum context ({n} < {need} points)"
        )

    values = ts.values
    stamps = ts.timestamps
    spread_values = stats.std if spread == "std" else stats.variance
    p_def = stats.profile_defined
    s_def = stats.spread_defined
    lags = periodicity * np.arange(trend_depth, 0, -1)

    windows: list[SampleWindow] = []
    skipped = 0
    for origin in range(first_origin, last_origin + 1, stride):
        h0 = origin - history_steps + 1
        f0, f1 = origin + 1, origin + 1 + horizon
        if not (p_def[h0:f0].all() and p_def[f0:f1].all() and s_def[f0:f1].all()):
            skipped += 1
            continue
        future = np.arange(f0, f1)
        trend = values[future[None, :] - lags[:, None]]
        windows.append(
            SampleWindow(
                origin_index=origin,
                origin_timestamp=stamps[origin],
                history=values[h0:f0].copy(),
                noise_history=values[h0:f0] - stats.profile[h0:f0],
                trend=trend,
                exo=exo.matrix[:, h0:f1].copy(),
                stats_profile=stats.profile[f0:f1].copy(),
                stats_spread=spread_values[f0:f1].copy(),
                spread_kind=spread,
                target=values[f0:f1].copy(),
            )
        )
    return WindowSet(windows=windows, skipped=skipped)


def dump_windows_csv(windows: Iterable[SampleWindow], path) -> None:
    """Debug export: one row per window, slices flattened into columns."""
    windows = list(windows)
    if not windows:
        raise ValueError("no windows to dump")
    first = windows[0]
    slices = ("history", "noise_history", "trend", "exo",
              "stats_profile", "stats_spread", "target")
    header = ["origin"]
    for name in slices:
        header += [f"{name}_{i}" for i in range(getattr(first, name).size)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for w in windows:
            row = [str(w.origin_timestamp)]
            for name in slices:
                row += [repr(float(x)) for x in getattr(w, name).ravel()]
            writer.writerow(row)
