"""Minimal reverse-mode differentiation core.

Just enough tape machinery for the forecasting network: 1-d convolutions,
dense layers, ELU, stacking, flattening, learnable weighted sums, and the
elementwise pieces the losses need. All arithmetic is float64. Ops accept
either a single sample or a batch with a leading batch axis.
"""

from __future__ import annotations

import json

import numpy as np

_check_finite = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle finiteness assertions after every forward/backward step."""
    global _check_finite
    _check_finite = bool(enabled)


def _assert_finite(data, where):
    if _check_finite and not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values in {where}")


class Tensor:
    """Dense float64 array plus an optional gradient and tape hooks."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        _assert_finite(self.data, "forward pass")

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                _assert_finite(g, "backward pass")
                parent.grad = g if parent.grad is None else parent.grad + g

    # Elementwise sugar used by the loss expressions.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _result(data, parents, backward):
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, _parents=tuple(parents),
                  _backward=backward if requires else None)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    return _result(a.data / b.data, (a, b),
                   lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def scale(a: Tensor, factor: float) -> Tensor:
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def absolute(a: Tensor) -> Tensor:
    # Subgradient at 0 is defined as 0 (np.sign(0) == 0).
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def mean(a: Tensor) -> Tensor:
    size = a.data.size

    def backward(g):
        return (np.full_like(a.data, float(g) / size),)

    return _result(np.asarray(a.data.mean()), (a,), backward)


def elu(a: Tensor) -> Tensor:
    """Exponential linear unit with unit saturation: x, or exp(x) - 1 below 0."""
    neg = np.minimum(a.data, 0.0)
    out = np.where(a.data > 0, a.data, np.expm1(neg))

    def backward(g):
        return (g * np.where(a.data > 0, 1.0, np.exp(neg)),)

    return _result(out, (a,), backward)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-padded cross-correlation with width-3 kernels.

    ``x`` is [channels, length] or [batch, channels, length]; ``kernels`` is
    [out_channels, in_channels, 3]; output length equals input length.
    """
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ValueError(f"conv1d: expected rank 2 or 3 input, got {x.data.shape}")
    batch, c_in, length = xd.shape
    if kernels.data.ndim != 3 or kernels.data.shape[2] != 3:
        raise ValueError(f"conv1d: kernels must be [out, in, 3], got {kernels.data.shape}")
    c_out, c_k, _ = kernels.data.shape
    if c_k != c_in:
        raise ValueError(f"conv1d: input has {c_in} channels, kernels expect {c_k}")
    if bias.data.shape != (c_out,):
        raise ValueError(f"conv1d: bias must be [{c_out}], got {bias.data.shape}")

    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1)))
    out = np.broadcast_to(bias.data[None, :, None], (batch, c_out, length)).copy()
    for k in range(3):
        out += np.einsum("oc,bcl->bol", kernels.data[:, :, k], xp[:, :, k:k + length])

    def backward(g):
        gb3 = g[None] if squeeze else g
        g_kernels = np.empty_like(kernels.data)
        g_xp = np.zeros_like(xp)
        for k in range(3):
            g_kernels[:, :, k] = np.einsum("bol,bcl->oc", gb3, xp[:, :, k:k + length])
            g_xp[:, :, k:k + length] += np.einsum(
                "bol,oc->bcl", gb3, kernels.data[:, :, k])
        g_x = g_xp[:, :, 1:length + 1]
        g_bias = gb3.sum(axis=(0, 2))
        return (g_x[0] if squeeze else g_x), g_kernels, g_bias

    return _result(out[0] if squeeze else out, (x, kernels, bias), backward)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map: x @ weights.T + bias, for [n] or [batch, n] inputs."""
    squeeze = x.data.ndim == 1
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 2:
        raise ValueError(f"dense: expected rank 1 or 2 input, got {x.data.shape}")
    n_out, n_in = weights.data.shape
    if xd.shape[1] != n_in:
        raise ValueError(f"dense: input width {xd.shape[1]} vs weights {weights.data.shape}")
    if bias.data.shape != (n_out,):
        raise ValueError(f"dense: bias must be [{n_out}], got {bias.data.shape}")
    out = xd @ weights.data.T + bias.data

    def backward(g):
        gb2 = g[None] if squeeze else g
        g_x = gb2 @ weights.data
        g_w = gb2.T @ xd
        g_bias = gb2.sum(axis=0)
        return (g_x[0] if squeeze else g_x), g_w, g_bias

    return _result(out[0] if squeeze else out, (x, weights, bias), backward)


def concat_new_axis(a: Tensor, b: Tensor) -> Tensor:
    """Stack two same-shape tensors along a fresh axis before the last one.

    For unbatched inputs the new axis leads ([n] -> [2, n]); for batched
    inputs it sits after the batch axis ([batch, n] -> [batch, 2, n]).
    """
    _same_shape(a, b, "concat_new_axis")
    axis = a.data.ndim - 1
    out = np.stack([a.data, b.data], axis=axis)

    def backward(g):
        return np.take(g, 0, axis=axis), np.take(g, 1, axis=axis)

    return _result(out, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    original = x.data.shape
    return _result(x.data.reshape(shape), (x,),
                   lambda g: (g.reshape(original),))


def flatten(x: Tensor) -> Tensor:
    """Reshape to rank 1, preserving row-major order."""
    return reshape(x, (-1,))


def weighted_sum(inputs, weights: Tensor) -> Tensor:
    """Sum of same-shape tensors, each scaled by one trainable weight."""
    inputs = list(inputs)
    if weights.data.shape != (len(inputs),):
        raise ValueError(
            f"weighted_sum: need {len(inputs)} weights, got {weights.data.shape}")
    for t in inputs[1:]:
        _same_shape(inputs[0], t, "weighted_sum")
    stacked = np.stack([t.data for t in inputs], axis=0)
    out = np.tensordot(weights.data, stacked, axes=(0, 0))

    def backward(g):
        g_weights = np.array([np.sum(g * t.data) for t in inputs])
        return (*[w * g for w in weights.data], g_weights)

    return _result(out, (*inputs, weights), backward)


class ParamStore:
    """Named trainable tensors plus per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None


class NonFiniteGradientError(RuntimeError):
    pass


def adam_step(params: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update with bias correction; missing grads count as zero."""
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient for {name!r}")
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(params: ParamStore, path) -> None:
    """Persist parameters as name -> shape + row-major float64 values."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
            for name, t in params.items()
        },
    }
    # Insertion order is the store's stable order; keep it on disk.
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> ParamStore:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    store = ParamStore()
    for name, entry in payload["params"].items():
        data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        store.add(name, data)
    return store


def grad_check(fn, tensors, h: float = 1e-4) -> float:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild its scalar output from the given leaf tensors on
    every call. Returns the maximum over all coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-6, 1e-3]")
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]

    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            f_plus = float(fn().data)
            flat[i] = original - h
            f_minus = float(fn().data)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            rel = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]), abs(numeric))
            worst = max(worst, rel)
    return worst
