"""The ProbPNN forecasting model.

Three components feed two learnable aggregation heads. A noise component
encodes the recent deviations of the series from its rolling profile
together with calendar features; a trend component encodes periodicity-
lagged values for every forecast step; a statistics component passes the
rolling profile and the rolling spread straight through. Each aggregation
head is a scalar-weighted sum over its three inputs and yields, per forecast
step, an expected value and an expected error which parameterize a Gaussian.

Two variants exist: ``sigma`` learns the standard deviation against the
rolling std, ``sigma_squared`` learns the variance against the rolling
variance. The combined training loss weights the mean term and the error
term adaptively so neither dominates.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .timeseries import CalendarGrouping, SampleWindow

VARIANT_SIGMA = "sigma"
VARIANT_SIGMA_SQUARED = "sigma_squared"
VARIANTS = (VARIANT_SIGMA, VARIANT_SIGMA_SQUARED)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class ProbPNNConfig:
    """Hyperparameters and shapes for one model instance.

    ``exo_channels`` must match the exogenous encoding of the windows the
    model will see (5 for electricity-style features, 3 for traffic-style).
    """

    variant: str = VARIANT_SIGMA
    history_steps: int = 36
    horizon: int = 24
    periodicity: int = 168
    trend_depth: int = 3
    window_days: float = 28.0
    grouping: CalendarGrouping = CalendarGrouping.HOUR_WEEKEND
    exo_channels: int = 5
    conv_channels: tuple[int, ...] = (4, 8, 16, 32, 1)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    err_floor: float = 1e-6
    detach_adaptive_weights: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("history_steps", "horizon", "periodicity", "trend_depth",
                     "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.window_days <= 0:
            raise ValueError("window_days must be positive")
        if self.conv_channels[-1] != 1:
            raise ValueError("the final convolution must have one filter")
        if isinstance(self.grouping, str):
            self.grouping = CalendarGrouping(self.grouping)
        self.conv_channels = tuple(self.conv_channels)

    @property
    def spread_kind(self) -> str:
        """Which rolling spread series pairs with this variant."""
        return "std" if self.variant == VARIANT_SIGMA else "variance"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grouping"] = self.grouping.value
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProbPNNConfig":
        d = dict(d)
        d["grouping"] = CalendarGrouping(d["grouping"])
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _add_conv_stack(params: ParamStore, rng, prefix: str, c_in: int,
                    plan: tuple[int, ...]) -> None:
    for i, c_out in enumerate(plan):
        params.add(f"{prefix}.conv{i}.kernel",
                   _glorot(rng, (c_out, c_in, 3), c_in * 3, c_out * 3))
        params.add(f"{prefix}.conv{i}.bias", np.zeros(c_out))
        c_in = c_out


def _add_dense(params: ParamStore, rng, name: str, n_in: int, n_out: int) -> None:
    params.add(f"{name}.weights", _glorot(rng, (n_out, n_in), n_in, n_out))
    params.add(f"{name}.bias", np.zeros(n_out))


def _run_conv_stack(params: ParamStore, prefix: str, x: Tensor,
                    n_layers: int) -> Tensor:
    # ELU between layers, linear after the last one.
    for i in range(n_layers):
        x = ad.conv1d(x, params[f"{prefix}.conv{i}.kernel"],
                      params[f"{prefix}.conv{i}.bias"])
        if i < n_layers - 1:
            x = ad.elu(x)
    return x


def _run_dense(params: ParamStore, name: str, x: Tensor) -> Tensor:
    return ad.dense(x, params[f"{name}.weights"], params[f"{name}.bias"])


class ProbPNNModel:
    """Parameter store plus the wiring of the three components."""

    def __init__(self, config: ProbPNNConfig, params: ParamStore,
                 scale: float = 1.0):
        self.config = config
        self.params = params
        self.scale = float(scale)

    def forward(self, batch: dict[str, np.ndarray]) -> tuple[Tensor, Tensor]:
        """Map a batch of window arrays to (mu, err), each [batch, horizon].

        Expected keys: ``noise`` [B, 1, k], ``exo`` [B, C, horizon],
        ``trend`` [B, m, horizon], ``profile`` and ``spread`` [B, horizon].
        Inputs are assumed to be in model (scaled) units already.
        """
        p = self.params
        plan = self.config.conv_channels
        n_layers = len(plan)
        n_batch = batch["noise"].shape[0]
        horizon = self.config.horizon

        hist = _run_conv_stack(p, "noise.hist", Tensor(batch["noise"]), n_layers)
        hist = ad.reshape(hist, (n_batch, self.config.history_steps))
        hist = _run_dense(p, "noise.hist_to_horizon", hist)

        exo = _run_conv_stack(p, "noise.exo", Tensor(batch["exo"]), n_layers)
        exo = ad.reshape(exo, (n_batch, horizon))

        merged = ad.concat_new_axis(hist, exo)
        merged = _run_conv_stack(p, "noise.merge", merged, n_layers)
        merged = ad.reshape(merged, (n_batch, horizon))
        noise_mu = _run_dense(p, "noise.mu_head", merged)
        noise_err = _run_dense(p, "noise.err_head", merged)

        trend = _run_conv_stack(p, "trend", Tensor(batch["trend"]), n_layers)
        trend = ad.reshape(trend, (n_batch, horizon))
        trend_mu = _run_dense(p, "trend.mu_head", trend)
        trend_err = _run_dense(p, "trend.err_head", trend)

        stats_mu = Tensor(batch["profile"])
        stats_err = Tensor(batch["spread"])

        mu = ad.weighted_sum([stats_mu, trend_mu, noise_mu], p["agg_mu.weights"])
        err = ad.weighted_sum([stats_err, trend_err, noise_err], p["agg_err.weights"])
        return mu, err


def build(config: ProbPNNConfig) -> ProbPNNModel:
    """Create a ProbPNN with freshly initialized parameters.

    Convolution and dense weights draw from a uniform distribution scaled by
    fan-in and fan-out; biases start at zero; each aggregation weight starts
    at one over the number of components.
    """
    rng = np.random.default_rng(config.seed)
    params = ParamStore()
    plan = config.conv_channels

    _add_conv_stack(params, rng, "noise.hist", 1, plan)
    _add_dense(params, rng, "noise.hist_to_horizon",
               config.history_steps, config.horizon)
    _add_conv_stack(params, rng, "noise.exo", config.exo_channels, plan)
    _add_conv_stack(params, rng, "noise.merge", 2, plan)
    _add_dense(params, rng, "noise.mu_head", config.horizon, config.horizon)
    _add_dense(params, rng, "noise.err_head", config.horizon, config.horizon)

    _add_conv_stack(params, rng, "trend", config.trend_depth, plan)
    _add_dense(params, rng, "trend.mu_head", config.horizon, config.horizon)
    _add_dense(params, rng, "trend.err_head", config.horizon, config.horizon)

    params.add("agg_mu.weights", np.full(3, 1.0 / 3.0))
    params.add("agg_err.weights", np.full(3, 1.0 / 3.0))
    return ProbPNNModel(config, params)


def loss_l1(mu: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error of the expected values."""
    return ad.mean(ad.absolute(mu - target))


def loss_l2(mu: Tensor, err: Tensor, target: Tensor, variant: str) -> Tensor:
    """Mean absolute mismatch between realized and expected error.

    The ``sigma_squared`` variant compares the squared residual against the
    expected error; the ``sigma`` variant compares the absolute residual.
    """
    d = mu - target
    if variant == VARIANT_SIGMA_SQUARED:
        return ad.mean(ad.absolute(ad.square(d) - err))
    if variant == VARIANT_SIGMA:
        return ad.mean(ad.absolute(ad.absolute(d) - err))
    raise ValueError(f"unknown variant {variant!r}")


def adaptive_weights(l1: float, l2: float) -> tuple[float, float]:
    """Balance the two loss terms: each is weighted by the other's share."""
    if l1 < 0 or l2 < 0:
        raise ValueError("losses must be non-negative")
    total = l1 + l2
    if total == 0.0:
        return 0.5, 0.5
    return l2 / total, l1 / total


def loss_total(l1: Tensor, l2: Tensor, detach_weights: bool = True) -> Tensor:
    """Combined loss w1*L1 + w2*L2 with adaptive weights.

    With ``detach_weights`` the weights are treated as per-batch constants
    and gradients flow only through L1 and L2 themselves; otherwise the
    weights are differentiated too, which makes the total the harmonic mean
    2*L1*L2/(L1+L2).
    """
    if detach_weights:
        w1, w2 = adaptive_weights(float(l1.data), float(l2.data))
        return l1 * w1 + l2 * w2
    total = l1 + l2
    if float(total.data) == 0.0:
        return l1 * 0.5 + l2 * 0.5
    return ad.div(ad.mul(l1, l2) * 2.0, total)


def training_scale(windows: list[SampleWindow]) -> float:
    """Normalization constant: the largest magnitude seen in training data."""
    peak = 0.0
    for w in windows:
        peak = max(peak, float(np.abs(w.target).max()),
                   float(np.abs(w.history).max()))
    return peak if peak > 0 else 1.0


def _stack_batches(windows: list[SampleWindow], config: ProbPNNConfig,
                   scale: float) -> dict[str, np.ndarray]:
    inv = 1.0 / scale
    spread_factor = inv if config.variant == VARIANT_SIGMA else inv * inv
    return {
        "noise": np.stack([w.noise_history for w in windows])[:, None, :] * inv,
        "exo": np.stack([w.exo[:, config.history_steps:] for w in windows]),
        "trend": np.stack([w.trend for w in windows]) * inv,
        "profile": np.stack([w.stats_profile for w in windows]) * inv,
        "spread": np.stack([w.stats_spread for w in windows]) * spread_factor,
        "target": np.stack([w.target for w in windows]) * inv,
    }


@dataclass
class TrainingReport:
    """Per-epoch loss trace plus wall-clock timing and batch weights."""

    epochs: list[dict] = field(default_factory=list)
    batch_w1: list[float] = field(default_factory=list)
    batch_w2: list[float] = field(default_factory=list)
    total_seconds: float = 0.0
    scale: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def train(model: ProbPNNModel, windows: list[SampleWindow],
          config: ProbPNNConfig | None = None,
          scale: float | None = None) -> TrainingReport:
    """Mini-batch training over shuffled windows.

    Inputs and targets are divided by ``scale`` (the training-set maximum by
    default); the spread input is divided by ``scale`` or its square
    depending on the variant. Adaptive weights are recomputed from each
    batch's loss values. Raises TrainingDivergedError on a non-finite loss.
    """
    config = config or model.config
    if not windows:
        raise ValueError("cannot train on an empty window set")
    for w in windows:
        if w.spread_kind != config.spread_kind:
            raise ValueError(
                f"window spread {w.spread_kind!r} does not match "
                f"variant {config.variant!r} (needs {config.spread_kind!r})")

    if scale is None:
        scale = training_scale(windows)
    model.scale = float(scale)
    arrays = _stack_batches(windows, config, model.scale)
    n = len(windows)
    rng = np.random.default_rng(config.seed)
    report = TrainingReport(scale=model.scale)
    started = time.perf_counter()

    for epoch in range(config.epochs):
        epoch_start = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(3)
        n_batches = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            batch = {key: arr[idx] for key, arr in arrays.items()}
            mu, err = model.forward(batch)
            target = Tensor(batch["target"])
            l1 = loss_l1(mu, target)
            l2 = loss_l2(mu, err, target, config.variant)
            total = loss_total(l1, l2, config.detach_adaptive_weights)
            if not np.isfinite(total.data):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}")
            w1, w2 = adaptive_weights(float(l1.data), float(l2.data))
            report.batch_w1.append(w1)
            report.batch_w2.append(w2)
            model.params.zero_grad()
            total.backward()
            ad.adam_step(model.params, lr=config.learning_rate,
                         beta1=config.beta1, beta2=config.beta2,
                         eps=config.epsilon)
            sums += (float(total.data), float(l1.data), float(l2.data))
            n_batches += 1
        report.epochs.append({
            "epoch": epoch,
            "loss": sums[0] / n_batches,
            "l1": sums[1] / n_batches,
            "l2": sums[2] / n_batches,
            "seconds": time.perf_counter() - epoch_start,
        })
    report.total_seconds = time.perf_counter() - started
    return report


@dataclass
class ProbabilisticForecast:
    """Per-step expected values and expected errors from one origin.

    ``variant`` records whether ``err`` is a standard deviation or a
    variance; after clamping, ``err`` is strictly positive.
    """

    origin_timestamp: np.datetime64
    mu: np.ndarray
    err: np.ndarray
    variant: str


def predict(model: ProbPNNModel, window: SampleWindow) -> ProbabilisticForecast:
    """Forecast one window, rescaled to data units and error-floored."""
    config = model.config
    if window.spread_kind != config.spread_kind:
        raise ValueError(
            f"window spread {window.spread_kind!r} does not match "
            f"variant {config.variant!r}")
    batch = _stack_batches([window], config, model.scale)
    mu, err = model.forward(batch)
    factor = model.scale if config.variant == VARIANT_SIGMA else model.scale ** 2
    mu_out = mu.data[0] * model.scale
    err_out = np.maximum(err.data[0] * factor, config.err_floor)
    return ProbabilisticForecast(
        origin_timestamp=window.origin_timestamp,
        mu=mu_out,
        err=err_out,
        variant=config.variant,
    )


def save_model(model: ProbPNNModel, checkpoint_path, sidecar_path) -> None:
    """Write the parameter checkpoint plus a JSON sidecar with the config."""
    ad.save_checkpoint(model.params, checkpoint_path)
    sidecar = {"config": model.config.to_dict(), "scale": model.scale}
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)


def load_model(checkpoint_path, sidecar_path) -> ProbPNNModel:
    with open(sidecar_path, encoding="utf-8") as fh:
        sidecar = json.load(fh)
    config = ProbPNNConfig.from_dict(sidecar["config"])
    params = ad.load_checkpoint(checkpoint_path)
    return ProbPNNModel(config, params, scale=sidecar["scale"])
