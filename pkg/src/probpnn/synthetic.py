"""Synthetic hourly series with calendar structure, for tests and demos.

The generator is intentionally simple and fully documented: a daily
sinusoid, scaled down on weekends, plus a slow linear trend and Gaussian
noise whose standard deviation depends on the hour of day. Every quantity
is drawn from a seeded generator, so series are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .timeseries import TimeSeries

# A Monday, so weekly structure starts cleanly.
DEFAULT_START = datetime(2021, 1, 4)


@dataclass
class SyntheticSpec:
    """Parameters of one generated series."""

    name: str = "synthetic"
    weeks: int = 16
    seed: int = 0
    base_level: float = 100.0
    daily_amplitude: float = 30.0
    daily_phase_hours: float = 6.0
    weekend_factor: float = 0.7
    trend_per_hour: float = 0.005
    noise_base: float = 4.0
    noise_modulation: float = 0.5
    noise_phase_hours: float = 15.0
    start: datetime = DEFAULT_START


def generate_series(spec: SyntheticSpec) -> TimeSeries:
    """Draw one series following the documented generator.

    value(i) = (base + amplitude * sin(2*pi*(hour - phase)/24))
               * (weekend_factor on Sat/Sun else 1)
               + trend_per_hour * i
               + sigma(hour) * eps_i
    sigma(hour) = noise_base * (1 + modulation * sin(2*pi*(hour - noise_phase)/24))
    """
    n = spec.weeks * 7 * 24
    rng = np.random.default_rng(spec.seed)
    idx = np.arange(n)
    hour = (spec.start.hour + idx) % 24
    day = (spec.start.weekday() * 24 + spec.start.hour + idx) // 24 % 7
    weekend = day >= 5

    shape = spec.base_level + spec.daily_amplitude * np.sin(
        2.0 * np.pi * (hour - spec.daily_phase_hours) / 24.0)
    factor = np.where(weekend, spec.weekend_factor, 1.0)
    sigma = spec.noise_base * (1.0 + spec.noise_modulation * np.sin(
        2.0 * np.pi * (hour - spec.noise_phase_hours) / 24.0))
    values = shape * factor + spec.trend_per_hour * idx \
        + sigma * rng.standard_normal(n)
    return TimeSeries(start=spec.start, step=timedelta(hours=1),
                      values=values, name=spec.name)


def generate_family(count: int, weeks: int, seed: int,
                    start: datetime = DEFAULT_START) -> list[TimeSeries]:
    """Several related series with jittered parameters, one sub-seed each."""
    rng = np.random.default_rng(seed)
    series = []
    for i in range(count):
        spec = SyntheticSpec(
            name=f"synthetic_{i:02d}",
            weeks=weeks,
            seed=int(rng.integers(0, 2**63 - 1)),
            base_level=float(rng.uniform(80.0, 120.0)),
            daily_amplitude=float(rng.uniform(20.0, 40.0)),
            daily_phase_hours=float(rng.uniform(4.0, 8.0)),
            weekend_factor=float(rng.uniform(0.6, 0.8)),
            trend_per_hour=float(rng.uniform(0.002, 0.008)),
            noise_base=float(rng.uniform(3.0, 6.0)),
            noise_modulation=float(rng.uniform(0.3, 0.6)),
            noise_phase_hours=float(rng.uniform(12.0, 18.0)),
            start=start,
        )
        series.append(generate_series(spec))
    return series


def write_series_csv(ts: TimeSeries, path) -> None:
    """Write a series in the ingestion CSV format (timestamp, value)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"timestamp,{ts.name}\n")
        for stamp, value in zip(ts.timestamps, ts.values):
            fh.write(f"{stamp},{float(value)!r}\n")
