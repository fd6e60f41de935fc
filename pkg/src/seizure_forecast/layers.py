"""Layer forward passes and model assembly on top of the autodiff engine.

All forward functions accept either a single sequence ``[time, channels]``
(``[features]`` for dense) or a batch with one extra leading axis; the
output keeps the same batching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError, NumericError

LAYER_KINDS = ("conv1d", "maxpool1d", "lstm", "bilstm", "dense", "flatten", "activation")
ARCHITECTURES = ("bilstm", "cnn_lstm", "cnn_bilstm")
ACTIVATIONS = {"relu": ad.relu, "sigmoid": ad.sigmoid, "tanh": ad.tanh}

_SIZE_PARAMS = {
    "conv1d": ("in_channels", "out_channels", "kernel_size", "stride"),
    "maxpool1d": ("pool_size", "stride"),
    "lstm": ("input_size", "hidden_size"),
    "bilstm": ("input_size", "hidden_size"),
    "dense": ("in_features", "out_features"),
    "flatten": (),
    "activation": (),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        for name in _SIZE_PARAMS[self.kind]:
            value = self.params.get(name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{self.kind}.{name} must be an integer >= 1, got {value!r}")
        if self.kind == "conv1d" and self.params.get("padding", 0) < 0:
            raise ConfigError("conv1d.padding must be >= 0")
        if self.kind in ("dense", "activation"):
            act = self.params.get("activation")
            if act is not None and act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": dict(sorted(self.params.items()))}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LayerSpec":
        return cls(d["kind"], dict(d["params"]))


def weight_shapes(spec: LayerSpec) -> dict[str, tuple[int, ...]]:
    p = spec.params
    if spec.kind == "conv1d":
        return {"kernel": (p["out_channels"], p["in_channels"], p["kernel_size"]), "bias": (p["out_channels"],)}
    if spec.kind in ("lstm", "bilstm"):
        h, f = p["hidden_size"], p["input_size"]
        dirs = ("fwd",) if spec.kind == "lstm" else ("fwd", "rev")
        shapes = {}
        for d in dirs:
            shapes[f"W_{d}"] = (4 * h, f)
            shapes[f"U_{d}"] = (4 * h, h)
            shapes[f"b_{d}"] = (4 * h,)
        return shapes
    if spec.kind == "dense":
        return {"W": (p["out_features"], p["in_features"]), "b": (p["out_features"],)}
    return {}


@dataclass
class LayerWeights:
    """Named weight arrays for one layer."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self, spec: LayerSpec) -> None:
        expected = weight_shapes(spec)
        if set(expected) != set(self.arrays):
            raise DimensionError(f"{spec.kind} weights {sorted(self.arrays)} != expected {sorted(expected)}")
        for name, shape in expected.items():
            arr = self.arrays[name]
            if arr.shape != shape:
                raise DimensionError(f"{spec.kind}.{name} has shape {list(arr.shape)}, expected {list(shape)}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{spec.kind}.{name} contains non-finite values")

    def copy(self) -> "LayerWeights":
        return LayerWeights({k: v.copy() for k, v in self.arrays.items()})


def _as_param(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _batched(x: Tensor, rank: int) -> tuple[Tensor, bool]:
    if x.ndim == rank:
        return ad.reshape(x, (1,) + x.shape), True
    if x.ndim == rank + 1:
        return x, False
    raise DimensionError(f"expected a rank-{rank} input (or a batch of them), got shape {list(x.shape)}")


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return ad.reshape(y, y.shape[1:]) if squeeze else y


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def conv_output_length(time: int, kernel_size: int, stride: int = 1, padding: int = 0) -> int:
    return (time + 2 * padding - kernel_size) // stride + 1


def conv1d_forward(x, spec: LayerSpec, weights) -> Tensor:
    """Cross-correlation over time with zero padding; no activation."""
    x, squeeze = _batched(ad.as_tensor(x), 2)
    p = spec.params
    k, stride, pad = p["kernel_size"], p["stride"], p.get("padding", 0)
    batch, time, channels = x.shape
    if channels != p["in_channels"]:
        raise DimensionError(f"conv1d expects {p['in_channels']} input channels, got {channels}")
    out_time = conv_output_length(time, k, stride, pad)
    if out_time <= 0:
        raise DimensionError(f"conv1d input of length {time} too short: out_time = {out_time}")
    kernel = _as_param(weights["kernel"])
    bias = _as_param(weights["bias"])
    if pad:
        zeros = Tensor(np.zeros((batch, pad, channels)))
        x = ad.concat([zeros, x, zeros], axis=1)
    span = stride * (out_time - 1) + 1
    out = None
    # one matmul per kernel tap: out[t] += x[t*stride + j] @ kernel[:, :, j].T
    for j in range(k):
        tap = ad.reshape(x[:, j : j + span : stride, :], (batch * out_time, channels))
        w_j = ad.transpose(kernel[:, :, j])
        term = ad.matmul(tap, w_j)
        out = term if out is None else out + term
    out = out + bias
    return _unbatch(ad.reshape(out, (batch, out_time, p["out_channels"])), squeeze)


def maxpool1d_forward(x, pool_size: int, stride: int) -> Tensor:
    x, squeeze = _batched(ad.as_tensor(x), 2)
    time = x.shape[1]
    if time < pool_size:
        raise DimensionError(f"maxpool1d input length {time} shorter than pool size {pool_size}")
    out_time = (time - pool_size) // stride + 1
    span = stride * (out_time - 1) + 1
    taps = [x[:, j : j + span : stride, :] for j in range(pool_size)]
    out = ad.max(ad.stack(taps, axis=2), axis=2)
    return _unbatch(out, squeeze)


def _lstm_direction(x: Tensor, hidden: int, W, U, b, reverse: bool) -> Tensor:
    batch, time, features = x.shape
    W, U, b = _as_param(W), _as_param(U), _as_param(b)
    for t in (W, U, b):
        if not np.all(np.isfinite(t.data)):
            raise NumericError("lstm weight contains non-finite values")
    Wt, Ut = ad.transpose(W), ad.transpose(U)
    h = c = None
    outputs: list[Tensor | None] = [None] * time
    steps = range(time - 1, -1, -1) if reverse else range(time)
    first = True
    for t in steps:
        # per-step input slices keep the backward pass linear in time
        z = ad.matmul(x[:, t, :], Wt) + b
        if not first:
            z = z + ad.matmul(h, Ut)
        i = ad.sigmoid(z[:, 0:hidden])
        f = ad.sigmoid(z[:, hidden : 2 * hidden])
        g = ad.tanh(z[:, 2 * hidden : 3 * hidden])
        o = ad.sigmoid(z[:, 3 * hidden :])
        c = i * g if first else f * c + i * g
        h = o * ad.tanh(c)
        outputs[t] = h
        first = False
    return ad.stack(outputs, axis=1)


def lstm_forward(x, spec: LayerSpec, weights, direction: str = "forward") -> Tensor:
    """Unidirectional LSTM with gate order (input, forget, candidate, output).

    ``direction="reverse"`` walks time backwards but returns outputs in
    ascending time order.  Weight names use the suffix ``_fwd`` or ``_rev``.
    """
    x, squeeze = _batched(ad.as_tensor(x), 2)
    p = spec.params
    if x.shape[2] != p["input_size"]:
        raise DimensionError(f"lstm expects {p['input_size']} features, got {x.shape[2]}")
    if x.shape[1] < 1:
        raise DimensionError("lstm input needs at least one timestep")
    if direction not in ("forward", "reverse"):
        raise ContractError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    suffix = "fwd" if direction == "forward" else "rev"
    if f"W_{suffix}" not in weights:
        suffix = "fwd"
    out = _lstm_direction(
        x, p["hidden_size"], weights[f"W_{suffix}"], weights[f"U_{suffix}"], weights[f"b_{suffix}"],
        reverse=direction == "reverse",
    )
    return _unbatch(out, squeeze)


def bilstm_forward(x, spec: LayerSpec, weights) -> Tensor:
    x, squeeze = _batched(ad.as_tensor(x), 2)
    fwd = lstm_forward(x, spec, weights, "forward")
    rev = lstm_forward(x, spec, weights, "reverse")
    return _unbatch(ad.concat([fwd, rev], axis=2), squeeze)


def dense_forward(x, spec: LayerSpec, weights) -> Tensor:
    x, squeeze = _batched(ad.as_tensor(x), 1)
    p = spec.params
    if x.shape[1] != p["in_features"]:
        raise DimensionError(f"dense expects {p['in_features']} features, got {x.shape[1]}")
    y = ad.matmul(x, ad.transpose(_as_param(weights["W"]))) + _as_param(weights["b"])
    act = p.get("activation")
    if act is not None:
        y = ACTIVATIONS[act](y)
    return _unbatch(y, squeeze)


def flatten_forward(x: Tensor, batched: bool = True) -> Tensor:
    if not batched:
        return ad.reshape(x, (x.size,))
    return ad.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


def layer_forward(x: Tensor, spec: LayerSpec, weights) -> Tensor:
    """Apply one layer to a batched input."""
    kind = spec.kind
    if kind == "conv1d":
        return conv1d_forward(x, spec, weights)
    if kind == "maxpool1d":
        return maxpool1d_forward(x, spec.params["pool_size"], spec.params["stride"])
    if kind == "lstm":
        return lstm_forward(x, spec, weights, "forward")
    if kind == "bilstm":
        return bilstm_forward(x, spec, weights)
    if kind == "dense":
        return dense_forward(x, spec, weights)
    if kind == "flatten":
        return flatten_forward(x)
    return ACTIVATIONS[spec.params["activation"]](x)


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparameters:
    conv_filters: tuple[int, int, int] = (32, 64, 64)
    kernel_size: int = 5
    conv_stride: int = 1
    conv_padding: int = 0
    pool_size: int = 2
    pool_stride: int = 2
    lstm_hidden: int = 64
    dense_units: int = 64
    hidden_activation: str = "sigmoid"

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> "Hyperparameters":
        d = dict(d or {})
        if "conv_filters" in d:
            d["conv_filters"] = tuple(d["conv_filters"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model hyperparameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["conv_filters"] = list(self.conv_filters)
        return d


def _layer_specs(architecture: str, input_shape: tuple[int, int], hyper: Hyperparameters) -> list[LayerSpec]:
    time, channels = input_shape
    specs: list[LayerSpec] = []
    if architecture in ("cnn_lstm", "cnn_bilstm"):
        for filters in hyper.conv_filters:
            specs.append(LayerSpec("conv1d", {
                "in_channels": channels, "out_channels": filters, "kernel_size": hyper.kernel_size,
                "stride": hyper.conv_stride, "padding": hyper.conv_padding,
            }))
            specs.append(LayerSpec("activation", {"activation": "relu"}))
            specs.append(LayerSpec("maxpool1d", {"pool_size": hyper.pool_size, "stride": hyper.pool_stride}))
            time = conv_output_length(time, hyper.kernel_size, hyper.conv_stride, hyper.conv_padding)
            time = (time - hyper.pool_size) // hyper.pool_stride + 1 if time >= hyper.pool_size else 0
            channels = filters
            if time < 1:
                raise ConfigError(
                    f"window of {input_shape[0]} steps does not survive the conv/pool stack; "
                    f"minimal admissible length is {minimal_window_length(hyper)}"
                )
    elif architecture != "bilstm":
        raise ConfigError(f"unknown architecture {architecture!r}; choose from {ARCHITECTURES}")
    recurrent = "lstm" if architecture == "cnn_lstm" else "bilstm"
    specs.append(LayerSpec(recurrent, {"input_size": channels, "hidden_size": hyper.lstm_hidden}))
    width = hyper.lstm_hidden * (1 if recurrent == "lstm" else 2)
    specs.append(LayerSpec("flatten"))
    specs.append(LayerSpec("dense", {
        "in_features": time * width, "out_features": hyper.dense_units, "activation": hyper.hidden_activation,
    }))
    specs.append(LayerSpec("dense", {"in_features": hyper.dense_units, "out_features": 1, "activation": "sigmoid"}))
    return specs


def minimal_window_length(hyper: Hyperparameters) -> int:
    """Shortest input length that leaves at least one step after three conv/pool stages."""
    time = 1
    while True:
        t = time
        for _ in hyper.conv_filters:
            t = conv_output_length(t, hyper.kernel_size, hyper.conv_stride, hyper.conv_padding)
            t = (t - hyper.pool_size) // hyper.pool_stride + 1 if t >= hyper.pool_size else 0
            if t < 1:
                break
        if t >= 1:
            return time
        time += 1


def init_weights(spec: LayerSpec, rng: np.random.Generator) -> LayerWeights:
    p = spec.params
    if spec.kind == "conv1d":
        bound = math.sqrt(1.0 / (p["in_channels"] * p["kernel_size"]))
        return LayerWeights({
            "kernel": rng.uniform(-bound, bound, size=(p["out_channels"], p["in_channels"], p["kernel_size"])),
            "bias": np.zeros(p["out_channels"]),
        })
    if spec.kind == "dense":
        bound = math.sqrt(1.0 / p["in_features"])
        return LayerWeights({
            "W": rng.uniform(-bound, bound, size=(p["out_features"], p["in_features"])),
            "b": np.zeros(p["out_features"]),
        })
    if spec.kind in ("lstm", "bilstm"):
        h = p["hidden_size"]
        bound = math.sqrt(1.0 / h)
        arrays = {}
        for name, shape in weight_shapes(spec).items():
            if name.startswith("b_"):
                b = np.zeros(shape)
                b[h : 2 * h] = 1.0  # forget gate
                arrays[name] = b
            else:
                arrays[name] = rng.uniform(-bound, bound, size=shape)
        return LayerWeights(arrays)
    return LayerWeights()


class Model:
    """A stack of layers mapping ``[batch, time, channels]`` to scores in (0, 1)."""

    def __init__(self, architecture: str, input_shape, specs: list[LayerSpec], weights: list[LayerWeights]):
        if len(specs) != len(weights):
            raise ContractError("specs and weights must have the same length")
        for spec, w in zip(specs, weights):
            w.validate(spec)
        self.architecture = architecture
        self.input_shape = tuple(int(v) for v in input_shape)
        self.specs = specs
        self.weights = weights

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat ``{"<layer>.<name>": array}`` view sharing memory with the layers."""
        return {f"{i}.{name}": arr for i, w in enumerate(self.weights) for name, arr in w.arrays.items()}

    def forward(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        """Build the graph for a batch and return scores of shape ``[batch]``.

        ``params`` maps the names from :meth:`parameters` to leaf tensors;
        when omitted, constant tensors are created from the stored weights.
        """
        h = ad.as_tensor(x)
        if h.ndim == 2:
            h = ad.reshape(h, (1,) + h.shape)
        if tuple(h.shape[1:]) != self.input_shape:
            raise DimensionError(f"model expects windows of shape {list(self.input_shape)}, got {list(h.shape[1:])}")
        for i, (spec, w) in enumerate(zip(self.specs, self.weights)):
            if params is None:
                layer_params = w.arrays
            else:
                layer_params = {name: params[f"{i}.{name}"] for name in w.arrays}
            h = layer_forward(h, spec, layer_params)
        return ad.reshape(h, (h.shape[0],))

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        chunks = [self.forward(x[i : i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def copy(self) -> "Model":
        return Model(self.architecture, self.input_shape, list(self.specs), [w.copy() for w in self.weights])


def build_model(architecture: str, input_shape, hyper: Hyperparameters | None = None, rng_seed: int = 0):
    """Return ``(specs, weights)`` for one of the supported architectures."""
    hyper = hyper or Hyperparameters()
    input_shape = tuple(int(v) for v in input_shape)
    specs = _layer_specs(architecture, input_shape, hyper)
    rng = np.random.default_rng(rng_seed)
    weights = [init_weights(s, rng) for s in specs]
    return specs, weights


def create_model(architecture: str, input_shape, hyper: Hyperparameters | None = None, rng_seed: int = 0) -> Model:
    specs, weights = build_model(architecture, input_shape, hyper, rng_seed)
    return Model(architecture, input_shape, specs, weights)
