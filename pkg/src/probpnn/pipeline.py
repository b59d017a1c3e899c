"""Run orchestration: prepare artifacts, train models, evaluate methods.

A run is driven by a JSON RunConfig and an output directory. ``prepare``
ingests and validates the CSVs, computes rolling statistics under the model
and baseline groupings, and materializes per-series artifacts. ``train``
fits the requested model variants per series and writes checkpoints and
training reports. ``evaluate`` forecasts the test period with every
requested method and produces the metric report plus plot-ready exports.

All artifacts are written deterministically: rerunning with the same config
and seed reproduces every file byte for byte, except for wall-clock fields
(key names ending in ``_seconds``).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from . import model as model_mod
from .gaussian import quantile, sample_ensemble, to_gaussian
from .metrics import PINBALL_QUANTILES, build_report
from .psf import psf_forecast
from .rollstats import RollingStats, compute_rolling_stats, export_stats_csv
from .timeseries import (CalendarGrouping, ExogenousFeatures, TimeSeries,
                         WindowSet, dump_windows_csv, encode_exogenous,
                         load_csv, make_windows, resample_hourly)

METHOD_SIGMA = "probpnn_sigma"
METHOD_SIGMA2 = "probpnn_sigma2"
METHOD_PSF = "psf"
ALL_METHODS = (METHOD_SIGMA, METHOD_SIGMA2, METHOD_PSF)

_METHOD_VARIANTS = {
    METHOD_SIGMA: model_mod.VARIANT_SIGMA,
    METHOD_SIGMA2: model_mod.VARIANT_SIGMA_SQUARED,
}

REPORT_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class SeriesSpec:
    name: str
    csv: str
    value_column: str
    timestamp_column: str = "timestamp"


@dataclass
class ModelSettings:
    """Shared ProbPNN hyperparameters; the variant is chosen per method."""

    history_steps: int = 36
    horizon: int = 24
    periodicity: int = 168
    trend_depth: int = 3
    window_days: float = 28.0
    grouping: str = CalendarGrouping.HOUR_WEEKEND.value
    conv_channels: list[int] = field(default_factory=lambda: [4, 8, 16, 32, 1])
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 50
    batch_size: int = 64
    err_floor: float = 1e-6
    detach_adaptive_weights: bool = True
    train_stride: int = 1


@dataclass
class RunConfig:
    """Everything needed to reproduce a prepare/train/evaluate run."""

    dataset_style: str
    series: list[SeriesSpec]
    train_start: datetime
    train_end: datetime
    test_start: datetime
    test_end: datetime
    out_dir: str
    resample: str | None = None
    methods: list[str] = field(default_factory=lambda: list(ALL_METHODS))
    model: ModelSettings = field(default_factory=ModelSettings)
    psf_grouping: str = CalendarGrouping.HOUR_OF_DAY.value
    eval_stride: int = 24
    ensemble_size: int = 1000
    ymax_mode: str = "test_max"
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.dataset_style not in ("electricity", "traffic"):
            raise ConfigError(f"unknown dataset style {self.dataset_style!r}")
        if not self.series:
            raise ConfigError("no series selected")
        names = [s.name for s in self.series]
        if len(set(names)) != len(names):
            raise ConfigError("series names must be unique")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if not self.methods:
            raise ConfigError("no methods selected")
        if not self.train_start < self.train_end:
            raise ConfigError("train_start must precede train_end")
        if not self.test_start < self.test_end:
            raise ConfigError("test_start must precede test_end")
        if self.train_end > self.test_start:
            raise ConfigError("train end must precede test start")
        if self.ymax_mode not in ("test_max", "train_max", "global_max"):
            raise ConfigError(f"unknown ymax_mode {self.ymax_mode!r}")
        if self.eval_stride < 1 or self.ensemble_size < 2 or self.jobs < 1:
            raise ConfigError("eval_stride, ensemble_size, jobs must be positive")
        if self.resample not in (None, "mean", "sum"):
            raise ConfigError(f"unknown resample mode {self.resample!r}")
        CalendarGrouping(self.model.grouping)
        CalendarGrouping(self.psf_grouping)

    @property
    def exo_channels(self) -> int:
        return 5 if self.dataset_style == "electricity" else 3

    def model_config(self, method: str, seed: int) -> model_mod.ProbPNNConfig:
        m = self.model
        return model_mod.ProbPNNConfig(
            variant=_METHOD_VARIANTS[method],
            history_steps=m.history_steps,
            horizon=m.horizon,
            periodicity=m.periodicity,
            trend_depth=m.trend_depth,
            window_days=m.window_days,
            grouping=CalendarGrouping(m.grouping),
            exo_channels=self.exo_channels,
            conv_channels=tuple(m.conv_channels),
            learning_rate=m.learning_rate,
            beta1=m.beta1,
            beta2=m.beta2,
            epsilon=m.epsilon,
            epochs=m.epochs,
            batch_size=m.batch_size,
            seed=seed,
            err_floor=m.err_floor,
            detach_adaptive_weights=m.detach_adaptive_weights,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("train_start", "train_end", "test_start", "test_end"):
            d[key] = getattr(self, key).isoformat(sep=" ")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        try:
            d["series"] = [SeriesSpec(**s) for s in d["series"]]
            if "model" in d:
                d["model"] = ModelSettings(**d["model"])
            for key in ("train_start", "train_end", "test_start", "test_end"):
                d[key] = datetime.fromisoformat(d[key])
            config = cls(**d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad run config: {exc}") from exc
        config.validate()
        return config

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save_json(self, path) -> None:
        _write_json(path, self.to_dict())


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _prepare_dir(config: RunConfig) -> Path:
    return Path(config.out_dir) / "prepare"


def _train_dir(config: RunConfig) -> Path:
    return Path(config.out_dir) / "train"


def _evaluate_dir(config: RunConfig) -> Path:
    return Path(config.out_dir) / "evaluate"


def _bound_index(ts: TimeSeries, when: datetime, label: str) -> int:
    """Map a split timestamp to a series index; one-past-the-end is legal."""
    delta = (when - ts.start).total_seconds()
    steps, rem = divmod(delta, ts.step_seconds)
    idx = int(steps)
    if rem != 0 or not 0 <= idx <= len(ts):
        raise ConfigError(
            f"{label} {when} is not inside the data range of {ts.name!r}")
    return idx


@dataclass
class PreparedSeries:
    """In-memory view of one series' prepared artifacts."""

    ts: TimeSeries
    exo: ExogenousFeatures
    stats_model: RollingStats
    stats_psf: RollingStats
    train_lo: int
    train_hi: int
    test_lo: int
    test_hi: int

    def y_max(self, mode: str) -> float:
        if mode == "train_max":
            segment = self.ts.values[self.train_lo:self.train_hi]
        elif mode == "test_max":
            segment = self.ts.values[self.test_lo:self.test_hi]
        else:
            segment = self.ts.values
        peak = float(segment.max())
        if peak <= 0:
            raise ConfigError(
                f"series {self.ts.name!r} has non-positive maximum; "
                "normalized metrics are undefined")
        return peak

    def train_scale(self) -> float:
        segment = self.ts.values[self.train_lo:self.train_hi]
        peak = float(np.abs(segment).max())
        return peak if peak > 0 else 1.0


def _load_series(spec: SeriesSpec, config: RunConfig) -> TimeSeries:
    ts = load_csv(spec.csv, spec.value_column, spec.timestamp_column)
    ts.name = spec.name
    if config.resample is not None:
        ts = resample_hourly(ts, agg=config.resample)
    if ts.step != timedelta(hours=1):
        raise ConfigError(
            f"series {spec.name!r} has step {ts.step}; resample it to hourly")
    return ts


def _stats_paths(series_dir: Path, which: str) -> dict[str, Path]:
    fields = ("profile", "variance", "std", "profile_defined", "spread_defined")
    return {f: series_dir / f"stats_{which}_{f}.npy" for f in fields}


def _save_stats(series_dir: Path, which: str, stats: RollingStats) -> None:
    paths = _stats_paths(series_dir, which)
    for name, path in paths.items():
        np.save(path, getattr(stats, name))


def _load_stats(series_dir: Path, which: str, grouping: CalendarGrouping,
                window_days: float) -> RollingStats:
    paths = _stats_paths(series_dir, which)
    arrays = {name: np.load(path) for name, path in paths.items()}
    both = arrays["profile_defined"] & arrays["spread_defined"]
    defined_from = int(np.argmax(both)) if both.any() else None
    return RollingStats(window_days=window_days, grouping=grouping,
                        defined_from=defined_from, **arrays)


def prepare_series(spec: SeriesSpec, config: RunConfig,
                   dump_windows: bool = False) -> dict:
    """Ingest one series and write its artifacts; returns the manifest."""
    ts = _load_series(spec, config)
    bounds = {
        "train_lo": _bound_index(ts, config.train_start, "train_start"),
        "train_hi": _bound_index(ts, config.train_end, "train_end"),
        "test_lo": _bound_index(ts, config.test_start, "test_start"),
        "test_hi": _bound_index(ts, config.test_end, "test_end"),
    }
    series_dir = _prepare_dir(config) / spec.name
    series_dir.mkdir(parents=True, exist_ok=True)

    stats_model = compute_rolling_stats(
        ts, CalendarGrouping(config.model.grouping), config.model.window_days)
    stats_psf = compute_rolling_stats(
        ts, CalendarGrouping(config.psf_grouping), config.model.window_days)

    np.save(series_dir / "values.npy", ts.values)
    _write_json(series_dir / "meta.json", {
        "name": ts.name,
        "start": ts.start.isoformat(sep=" "),
        "step_seconds": ts.step_seconds,
        "n": len(ts),
        **bounds,
    })
    _save_stats(series_dir, "model", stats_model)
    _save_stats(series_dir, "psf", stats_psf)
    export_stats_csv(stats_model, ts, series_dir / "stats_model.csv")
    export_stats_csv(stats_psf, ts, series_dir / "stats_psf.csv")

    prepared = PreparedSeries(ts=ts, exo=encode_exogenous(ts, config.dataset_style),
                              stats_model=stats_model, stats_psf=stats_psf,
                              **bounds)
    train_set = _windows_for(prepared, config, "std", "train")
    test_set = _windows_for(prepared, config, "std", "test")
    manifest = {
        "series": spec.name,
        "n": len(ts),
        "train_windows": len(train_set.windows),
        "train_skipped": train_set.skipped,
        "test_windows": len(test_set.windows),
        "test_skipped": test_set.skipped,
        "diagnostic": train_set.diagnostic or test_set.diagnostic,
    }
    _write_json(series_dir / "windows.json", manifest)
    if dump_windows and train_set.windows:
        dump_windows_csv(train_set.windows, series_dir / "windows_debug.csv")
    return manifest


def prepare_run(config: RunConfig, dump_windows: bool = False) -> dict:
    """Prepare all series; writes the run config copy and a summary."""
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save_json(out / "run_config.json")
    manifests = [prepare_series(spec, config, dump_windows)
                 for spec in config.series]
    summary = {"series_count": len(manifests), "series": manifests}
    _write_json(_prepare_dir(config) / "summary.json", summary)
    return summary


def load_prepared(config: RunConfig, name: str) -> PreparedSeries:
    series_dir = _prepare_dir(config) / name
    if not (series_dir / "meta.json").exists():
        raise FileNotFoundError(
            f"no prepared artifacts for series {name!r}; run prepare first")
    with open(series_dir / "meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    ts = TimeSeries(
        start=datetime.fromisoformat(meta["start"]),
        step=timedelta(seconds=meta["step_seconds"]),
        values=np.load(series_dir / "values.npy"),
        name=meta["name"],
    )
    stats_model = _load_stats(series_dir, "model",
                              CalendarGrouping(config.model.grouping),
                              config.model.window_days)
    stats_psf = _load_stats(series_dir, "psf",
                            CalendarGrouping(config.psf_grouping),
                            config.model.window_days)
    return PreparedSeries(
        ts=ts, exo=encode_exogenous(ts, config.dataset_style),
        stats_model=stats_model, stats_psf=stats_psf,
        train_lo=meta["train_lo"], train_hi=meta["train_hi"],
        test_lo=meta["test_lo"], test_hi=meta["test_hi"],
    )


def _windows_for(prepared: PreparedSeries, config: RunConfig, spread: str,
                 split: str) -> WindowSet:
    """Windows whose targets lie fully inside the requested split."""
    m = config.model
    stride = m.train_stride if split == "train" else config.eval_stride
    window_set = make_windows(
        prepared.ts, prepared.stats_model, prepared.exo,
        history_steps=m.history_steps, horizon=m.horizon,
        periodicity=m.periodicity, trend_depth=m.trend_depth,
        spread=spread, stride=stride,
    )
    lo, hi = ((prepared.train_lo, prepared.train_hi) if split == "train"
              else (prepared.test_lo, prepared.test_hi))
    kept = [w for w in window_set.windows
            if w.origin_index + 1 >= lo and w.origin_index + m.horizon <= hi - 1]
    return WindowSet(windows=kept, skipped=window_set.skipped,
                     diagnostic=window_set.diagnostic)


def _method_seed(config: RunConfig, series_index: int, method: str) -> int:
    method_index = list(ALL_METHODS).index(method)
    seq = np.random.SeedSequence([config.seed, series_index, method_index])
    return int(seq.generate_state(1)[0])


def _train_paths(config: RunConfig, name: str, method: str) -> dict[str, Path]:
    series_dir = _train_dir(config) / name
    return {
        "checkpoint": series_dir / f"{method}.checkpoint.json",
        "sidecar": series_dir / f"{method}.model.json",
        "report": series_dir / f"{method}.report.json",
    }


def train_one(config: RunConfig, series_index: int, method: str) -> dict:
    """Train one (series, method) pair and persist its artifacts."""
    if method not in _METHOD_VARIANTS:
        raise ConfigError(f"method {method!r} is not trainable")
    spec = config.series[series_index]
    prepared = load_prepared(config, spec.name)
    model_config = config.model_config(
        method, seed=_method_seed(config, series_index, method))
    window_set = _windows_for(prepared, config, model_config.spread_kind, "train")
    if not window_set.windows:
        raise RuntimeError(
            f"series {spec.name!r} has no training windows "
            f"({window_set.diagnostic or 'all origins skipped'})")
    model = model_mod.build(model_config)
    report = model_mod.train(model, window_set.windows, model_config,
                             scale=prepared.train_scale())
    paths = _train_paths(config, spec.name, method)
    paths["checkpoint"].parent.mkdir(parents=True, exist_ok=True)
    model_mod.save_model(model, paths["checkpoint"], paths["sidecar"])
    _write_json(paths["report"], report.to_dict())
    return {
        "series": spec.name,
        "method": method,
        "training_seconds": report.total_seconds,
        "final_loss": report.epochs[-1]["loss"],
        "n_windows": len(window_set.windows),
    }


def _train_worker(config_dict: dict, series_index: int, method: str) -> dict:
    return train_one(RunConfig.from_dict(config_dict), series_index, method)


def train_run(config: RunConfig) -> dict:
    """Train every requested trainable method on every series."""
    config.validate()
    jobs = [(i, m) for i in range(len(config.series))
            for m in config.methods if m in _METHOD_VARIANTS]
    results, failures = [], []
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = {pool.submit(_train_worker, config.to_dict(), i, m): (i, m)
                       for i, m in jobs}
            for future, (i, m) in futures.items():
                try:
                    results.append(future.result())
                except Exception as exc:
                    failures.append({"series": config.series[i].name,
                                     "method": m, "error": str(exc)})
    else:
        for i, m in jobs:
            try:
                results.append(train_one(config, i, m))
            except Exception as exc:
                failures.append({"series": config.series[i].name,
                                 "method": m, "error": str(exc)})
    results.sort(key=lambda r: (r["series"], r["method"]))
    summary = {"trained": results, "failures": failures}
    _train_dir(config).mkdir(parents=True, exist_ok=True)
    _write_json(_train_dir(config) / "summary.json", summary)
    return summary


def _quantile_curves(mu: np.ndarray, sigma: np.ndarray) -> dict[float, np.ndarray]:
    from .gaussian import GaussianForecast
    g = GaussianForecast(mu, sigma)
    return {alpha: quantile(g, alpha) for alpha in PINBALL_QUANTILES}


@dataclass
class MethodForecasts:
    """Pooled per-step Gaussian parameters over all evaluation origins."""

    origins: list[np.datetime64]
    mu: np.ndarray
    sigma: np.ndarray
    y: np.ndarray
    horizon: int


def _forecast_method(prepared: PreparedSeries, config: RunConfig,
                     series_index: int, method: str) -> MethodForecasts:
    spec = config.series[series_index]
    if method in _METHOD_VARIANTS:
        paths = _train_paths(config, spec.name, method)
        if not paths["checkpoint"].exists():
            raise FileNotFoundError(
                f"missing checkpoint for {method!r} on series {spec.name!r}; "
                "run train first")
        model = model_mod.load_model(paths["checkpoint"], paths["sidecar"])
        window_set = _windows_for(prepared, config,
                                  model.config.spread_kind, "test")
        mus, sigmas, ys, origins = [], [], [], []
        for window in window_set.windows:
            forecast = model_mod.predict(model, window)
            g = to_gaussian(forecast)
            mus.append(g.mu)
            sigmas.append(g.sigma)
            ys.append(window.target)
            origins.append(window.origin_timestamp)
    else:
        window_set = _windows_for(prepared, config, "std", "test")
        mus, sigmas, ys, origins = [], [], [], []
        for window in window_set.windows:
            forecast = psf_forecast(prepared.stats_psf, window.origin_index,
                                    config.model.horizon)
            g = to_gaussian(forecast)
            mus.append(g.mu)
            sigmas.append(g.sigma)
            ys.append(window.target)
            origins.append(window.origin_timestamp)
    if not mus:
        raise RuntimeError(f"series {spec.name!r} has no evaluation windows")
    return MethodForecasts(
        origins=origins,
        mu=np.concatenate(mus),
        sigma=np.concatenate(sigmas),
        y=np.concatenate(ys),
        horizon=config.model.horizon,
    )


def _training_seconds(config: RunConfig, name: str, method: str) -> float:
    if method == METHOD_PSF:
        return 0.0
    with open(_train_paths(config, name, method)["report"],
              encoding="utf-8") as fh:
        return float(json.load(fh)["total_seconds"])


def evaluate_series(config: RunConfig, series_index: int
                    ) -> tuple[dict, dict[str, MethodForecasts]]:
    """Metrics and pooled forecasts for all requested methods on one series."""
    spec = config.series[series_index]
    prepared = load_prepared(config, spec.name)
    y_max = prepared.y_max(config.ymax_mode)
    out: dict[str, dict] = {}
    exports: dict[str, MethodForecasts] = {}
    for method in config.methods:
        fc = _forecast_method(prepared, config, series_index, method)
        method_index = list(ALL_METHODS).index(method)
        rng_seed = np.random.SeedSequence(
            [config.seed, series_index, method_index, 0xE17])
        rng = np.random.default_rng(rng_seed)
        draws = rng.standard_normal((config.ensemble_size, fc.mu.size))
        ensemble = fc.mu[None, :] + fc.sigma[None, :] * draws
        curves = _quantile_curves(fc.mu, fc.sigma)
        out[method] = {
            "ncrps": metrics_mod.ncrps(ensemble, fc.y, y_max),
            "npl": metrics_mod.npl(curves, fc.y, y_max),
            "dicr": metrics_mod.dicr(curves, fc.y),
            "nmae": metrics_mod.nmae(curves[0.50], fc.y, y_max),
            "training_seconds": _training_seconds(config, spec.name, method),
        }
        exports[method] = fc
    return out, exports


def _evaluate_worker(config_dict: dict, series_index: int):
    config = RunConfig.from_dict(config_dict)
    result, exports = evaluate_series(config, series_index)
    return config.series[series_index].name, result, exports


def _export_forecasts(config: RunConfig,
                      exports: dict[str, dict[str, MethodForecasts]]) -> None:
    """One CSV per method, all series pooled, written by the aggregator."""
    eval_dir = _evaluate_dir(config)
    eval_dir.mkdir(parents=True, exist_ok=True)
    quantile_names = [f"q_{alpha:g}" for alpha in PINBALL_QUANTILES]
    for method in config.methods:
        path = eval_dir / f"forecasts_{method}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("series,origin,step,mu,sigma,"
                     + ",".join(quantile_names) + "\n")
            for spec in config.series:
                fc = exports[spec.name][method]
                curves = _quantile_curves(fc.mu, fc.sigma)
                for w_idx, origin in enumerate(fc.origins):
                    for step in range(fc.horizon):
                        flat = w_idx * fc.horizon + step
                        row = [spec.name, str(origin), str(step + 1),
                               repr(float(fc.mu[flat])),
                               repr(float(fc.sigma[flat]))]
                        row += [repr(float(curves[alpha][flat]))
                                for alpha in PINBALL_QUANTILES]
                        fh.write(",".join(row) + "\n")


def evaluate_run(config: RunConfig) -> dict:
    """Evaluate all series and methods; writes report and exports."""
    config.validate()
    per_series: dict[str, dict] = {}
    all_exports: dict[str, dict[str, MethodForecasts]] = {}
    if config.jobs > 1 and len(config.series) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = [pool.submit(_evaluate_worker, config.to_dict(), i)
                       for i in range(len(config.series))]
            for future in futures:
                name, result, exports = future.result()
                per_series[name] = result
                all_exports[name] = exports
    else:
        for i in range(len(config.series)):
            result, exports = evaluate_series(config, i)
            per_series[config.series[i].name] = result
            all_exports[config.series[i].name] = exports
    _export_forecasts(config, all_exports)

    report = build_report(per_series, list(config.methods))
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": config.to_dict(),
        **report.to_dict(),
    }
    eval_dir = _evaluate_dir(config)
    eval_dir.mkdir(parents=True, exist_ok=True)
    _write_json(eval_dir / "report.json", payload)

    with open(eval_dir / "metrics_long.csv", "w", encoding="utf-8",
              newline="") as fh:
        fh.write("series,method,metric,value\n")
        for name in sorted(per_series):
            for method in config.methods:
                for metric, value in sorted(per_series[name][method].items()):
                    fh.write(f"{name},{method},{metric},{float(value)!r}\n")
    return payload


def strip_timing(payload):
    """Recursively drop wall-clock fields (keys ending in ``_seconds``)."""
    if isinstance(payload, dict):
        return {k: strip_timing(v) for k, v in payload.items()
                if not k.endswith("_seconds")}
    if isinstance(payload, list):
        return [strip_timing(v) for v in payload]
    return payload
