"""A small dense-network engine: layers, forward/backward passes, the three
reconstruction losses, mini-batch SGD and finite-difference gradient checks.

Samples are rows. A layer maps ``z_prev`` of shape ``(batch, n_in)`` to
``act(z_prev @ W.T + b)`` with ``W`` of shape ``(n_out, n_in)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    DegenerateWeighting,
    DivergenceError,
    ShapeError,
    StaleCache,
)

ACTIVATIONS = ("sigmoid", "tanh", "relu", "linear")


def _activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return expit(a)
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "linear":
        return a
    raise ConfigError(f"unknown activation {name!r}")


def _activation_slope(name: str, a: np.ndarray, z: np.ndarray) -> np.ndarray | float:
    if name == "sigmoid":
        return z * (1.0 - z)
    if name == "tanh":
        return 1.0 - z * z
    if name == "relu":
        return (a > 0).astype(float)
    return 1.0


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float)
        self.bias = np.array(self.bias, dtype=float)
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"weights {self.weights.shape} and bias {self.bias.shape} disagree")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ShapeError("layer parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class ForwardCache:
    """Pre-activations and activations of one forward pass (``z[0]`` is the input)."""

    pre: list[np.ndarray]
    z: list[np.ndarray]
    single: bool
    token: tuple


class Network:
    """An ordered stack of dense layers with chained dimensions."""

    def __init__(self, layers: Sequence[DenseLayer]):
        layers = list(layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer {i} outputs {a.n_out} but layer {i + 1} expects {b.n_in}")
        self.layers = layers
        self._version = 0

    @classmethod
    def initialize(cls, sizes: Sequence[int], activations: Sequence[str] | str,
                   rng: np.random.Generator, init_scale: float | None = None) -> "Network":
        """Uniform Glorot initialization unless ``init_scale`` is given; zero biases."""
        if len(sizes) < 2:
            raise ShapeError("need at least input and output sizes")
        if isinstance(activations, str):
            activations = [activations] * (len(sizes) - 1)
        if len(activations) != len(sizes) - 1:
            raise ShapeError("one activation per layer")
        layers = []
        for n_in, n_out, act in zip(sizes, sizes[1:], activations):
            scale = init_scale if init_scale is not None else math.sqrt(6.0 / (n_in + n_out))
            layers.append(DenseLayer(rng.uniform(-scale, scale, (n_out, n_in)), np.zeros(n_out), act))
        return cls(layers)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [l.n_out for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    def copy(self) -> "Network":
        return Network([l.copy() for l in self.layers])

    def _token(self) -> tuple:
        return (id(self), self._version, tuple(self.sizes))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        z = x[None, :] if single else x
        if z.ndim != 2 or z.shape[1] != self.layers[0].n_in:
            raise ShapeError(f"input has shape {x.shape}, network expects {self.layers[0].n_in} features")
        pres, zs = [], [z]
        for layer in self.layers:
            a = z @ layer.weights.T + layer.bias
            z = _activate(layer.activation, a)
            pres.append(a)
            zs.append(z)
        out = z[0] if single else z
        return out, ForwardCache(pres, zs, single, self._token())

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def encode(self, x: np.ndarray, depth: int) -> np.ndarray:
        """Activation after the first ``depth`` layers."""
        _, cache = self.forward(x)
        z = cache.z[depth]
        return z[0] if cache.single else z

    def apply_update(self, grads: Sequence[tuple[np.ndarray, np.ndarray]], lr: float) -> None:
        for layer, (dw, db) in zip(self.layers, grads):
            layer.weights -= lr * dw
            layer.bias -= lr * db
        self._version += 1

    def parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])

    def set_parameters(self, flat: np.ndarray) -> None:
        pos = 0
        for layer in self.layers:
            n = layer.weights.size
            layer.weights = flat[pos:pos + n].reshape(layer.weights.shape).copy()
            pos += n
            layer.bias = flat[pos:pos + layer.n_out].copy()
            pos += layer.n_out
        self._version += 1

    def same_parameters(self, other: "Network") -> bool:
        return self.sizes == other.sizes and self.activations == other.activations and \
            np.array_equal(self.parameters(), other.parameters())


# ---------------------------------------------------------------------------
# losses


def _pair(x, xr) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    xr = np.asarray(xr, dtype=float)
    if x.shape != xr.shape or x.size == 0:
        raise ShapeError(f"loss operands have shapes {x.shape} and {xr.shape}")
    return x, xr


def loss_mse(x, x_rec) -> float:
    """Mean squared error; batches are averaged over samples."""
    x, x_rec = _pair(x, x_rec)
    return float(np.mean((x - x_rec) ** 2))


def loss_mape(x, x_rec, epsilon: float = 1e-6) -> float:
    """Mean absolute percentage error in percent, denominators floored at ``epsilon``."""
    x, x_rec = _pair(x, x_rec)
    return float(100.0 * np.mean(np.abs(x - x_rec) / np.maximum(np.abs(x), epsilon)))


@dataclass(frozen=True)
class WeightedMseConfig:
    """Group weights for the variance-weighted MSE.

    ``corrupted`` holds 0-based dimension indices. ``alpha`` weighs the mean
    squared error over those dimensions and ``beta`` the mean over the rest.
    """

    alpha: float
    beta: float
    corrupted: tuple[int, ...]
    n_dims: int = 48
    dim_std: tuple[float, ...] | None = None
    sample_count: int | None = None

    def __post_init__(self):
        corrupted = tuple(sorted({int(i) for i in self.corrupted}))
        object.__setattr__(self, "corrupted", corrupted)
        if not corrupted or len(corrupted) >= self.n_dims:
            raise DegenerateWeighting("corrupted set must be a nonempty proper subset of the dimensions")
        if corrupted[0] < 0 or corrupted[-1] >= self.n_dims:
            raise DegenerateWeighting(f"corrupted indices must lie in 0..{self.n_dims - 1}")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise DegenerateWeighting("alpha and beta must lie in [0, 1]")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise DegenerateWeighting(f"alpha + beta must equal 1, got {self.alpha + self.beta}")
        if self.dim_std is not None:
            std = tuple(float(s) for s in self.dim_std)
            if len(std) != self.n_dims or min(std) < 0:
                raise DegenerateWeighting("dim_std must hold one non-negative value per dimension")
            object.__setattr__(self, "dim_std", std)

    @property
    def n_c(self) -> int:
        return len(self.corrupted)

    @property
    def n_r(self) -> int:
        return self.n_dims - self.n_c

    @property
    def ratio(self) -> float:
        return math.inf if self.beta == 0 else self.alpha / self.beta

    def dim_weights(self) -> np.ndarray:
        w = np.full(self.n_dims, self.beta / self.n_r)
        w[list(self.corrupted)] = self.alpha / self.n_c
        return w

    @classmethod
    def from_ratio(cls, corrupted, ratio: float, n_dims: int = 48) -> "WeightedMseConfig":
        if ratio < 0 or math.isnan(ratio):
            raise DegenerateWeighting(f"alpha/beta ratio must be non-negative, got {ratio}")
        if math.isinf(ratio):
            return cls(1.0, 0.0, tuple(corrupted), n_dims)
        beta = 1.0 / (1.0 + ratio)
        return cls(1.0 - beta, beta, tuple(corrupted), n_dims)

    @classmethod
    def from_data(cls, corrupted, data: np.ndarray) -> "WeightedMseConfig":
        """Derive the ratio from per-dimension sample standard deviations of ``data``."""
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or len(data) < 2:
            raise DegenerateWeighting("need at least two samples to estimate standard deviations")
        std = dimension_std(data)
        alpha, beta = ratio_from_std(corrupted, std)
        return cls(alpha, beta, tuple(corrupted), data.shape[1], tuple(std), len(data))


def dimension_std(data: np.ndarray) -> np.ndarray:
    """Per-dimension sample standard deviation (``J - 1`` denominator)."""
    return np.std(np.asarray(data, dtype=float), axis=0, ddof=1)


def std_ratio(corrupted, dim_std) -> float:
    """alpha/beta as group-size-normalized ratio of summed standard deviations."""
    std = np.asarray(dim_std, dtype=float)
    idx = np.zeros(std.shape[0], dtype=bool)
    idx[list(corrupted)] = True
    n_c, n_r = int(idx.sum()), int((~idx).sum())
    if n_c == 0 or n_r == 0:
        raise DegenerateWeighting("both the corrupted and the remaining group must be nonempty")
    if not np.all(np.isfinite(std)) or np.any(std < 0):
        raise DegenerateWeighting("standard deviations must be finite and non-negative")
    num = n_r * math.fsum(std[idx])
    den = n_c * math.fsum(std[~idx])
    if den == 0 or num == 0:
        raise DegenerateWeighting("a dimension group has zero total standard deviation")
    return num / den


def ratio_from_std(corrupted, dim_std) -> tuple[float, float]:
    r = std_ratio(corrupted, dim_std)
    beta = 1.0 / (1.0 + r)
    alpha = 1.0 - beta
    return alpha, beta


def loss_weighted_mse(x, x_rec, cfg: WeightedMseConfig) -> float:
    x, x_rec = _pair(x, x_rec)
    if x.shape[-1] != cfg.n_dims:
        raise ShapeError(f"weighted loss configured for {cfg.n_dims} dims, got {x.shape[-1]}")
    sq = (x - x_rec) ** 2
    per_sample = sq @ cfg.dim_weights()
    return float(np.mean(per_sample))


@dataclass(frozen=True)
class Loss:
    """A loss selection: ``mse``, ``mape`` or ``weighted_mse``."""

    kind: str = "mse"
    epsilon: float = 1e-6
    weighted: WeightedMseConfig | None = None

    def __post_init__(self):
        if self.kind not in ("mse", "mape", "weighted_mse"):
            raise ConfigError(f"unknown loss {self.kind!r}")
        if self.kind == "weighted_mse" and self.weighted is None:
            raise ConfigError("weighted_mse needs a WeightedMseConfig")

    def value(self, target, pred) -> float:
        if self.kind == "mse":
            return loss_mse(target, pred)
        if self.kind == "mape":
            return loss_mape(target, pred, self.epsilon)
        return loss_weighted_mse(target, pred, self.weighted)

    def grad(self, target: np.ndarray, pred: np.ndarray) -> np.ndarray:
        """d(loss)/d(pred) for a 2-D batch whose loss is the mean over rows."""
        batch, n = pred.shape
        diff = pred - target
        if self.kind == "mse":
            return diff * (2.0 / (batch * n))
        if self.kind == "mape":
            return np.sign(diff) * (100.0 / (batch * n)) / np.maximum(np.abs(target), self.epsilon)
        return diff * (2.0 * self.weighted.dim_weights() / batch)


def backward(net: Network, cache: ForwardCache, target: np.ndarray,
             loss: Loss) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact gradients of ``loss`` w.r.t. every layer's weights and bias."""
    if cache.token != net._token():
        raise StaleCache("cache was produced by a different network or before a parameter update")
    target = np.asarray(target, dtype=float)
    if cache.single:
        target = target[None, :]
    out = cache.z[-1]
    if target.shape != out.shape:
        raise ShapeError(f"target shape {target.shape} does not match output {out.shape}")
    delta = loss.grad(target, out)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        delta = delta * _activation_slope(layer.activation, cache.pre[i], cache.z[i + 1])
        grads[i] = (delta.T @ cache.z[i], delta.sum(axis=0))
        if i:
            delta = delta @ layer.weights
    return grads


def numerical_gradient(net: Network, x: np.ndarray, target: np.ndarray, loss: Loss,
                       h: float = 1e-5) -> np.ndarray:
    """Central finite differences over the flattened parameter vector."""
    probe = net.copy()
    theta = probe.parameters()
    out = np.empty_like(theta)
    for k in range(theta.size):
        orig = theta[k]
        theta[k] = orig + h
        probe.set_parameters(theta)
        up = loss.value(target, probe.predict(x))
        theta[k] = orig - h
        probe.set_parameters(theta)
        down = loss.value(target, probe.predict(x))
        theta[k] = orig
        out[k] = (up - down) / (2 * h)
    return out


def flatten_grads(grads: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])


def gradient_check(net: Network, x: np.ndarray, target: np.ndarray, loss: Loss,
                   h: float = 1e-5, abs_floor: float = 1e-7) -> float:
    """Worst relative disagreement between analytic and numerical gradients."""
    _, cache = net.forward(x)
    analytic = flatten_grads(backward(net, cache, target, loss))
    numeric = numerical_gradient(net, x, target, loss, h)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    max_iterations: int = 200
    batch_size: int = 32
    seed: int = 0
    init_scale: float | None = None
    early_stop_patience: int = 0

    def __post_init__(self):
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be finite and >= 0")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ConfigError("init_scale must be positive")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


@dataclass
class History:
    """Per-iteration (epoch) training and validation losses."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "train_loss", "val_loss"])
        for i, tr in enumerate(self.train_loss):
            va = repr(self.val_loss[i]) if i < len(self.val_loss) else ""
            w.writerow([i + 1, repr(tr), va])
        return buf.getvalue()


InputNoise = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def train(net: Network, inputs: np.ndarray, targets: np.ndarray, cfg: TrainConfig,
          loss: Loss | None = None, *, validation: tuple[np.ndarray, np.ndarray] | None = None,
          input_noise: InputNoise | None = None) -> tuple[Network, History]:
    """Mini-batch SGD on a private copy of ``net``.

    One iteration is one pass over the shuffled training rows. ``input_noise``
    re-corrupts each mini-batch as it is presented. With early stopping on,
    the parameters with the best validation loss seen (including the
    starting point) are returned.
    """
    loss = loss or Loss()
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(inputs) == 0 or len(inputs) != len(targets):
        raise ShapeError("inputs and targets must be nonempty and the same length")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    n = len(inputs)
    best_val, best_params, stale = math.inf, None, 0
    if validation is not None and cfg.early_stop_patience:
        best_val = loss.value(validation[1], net.predict(validation[0]))
        best_params = net.parameters()
    for it in range(1, cfg.max_iterations + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = inputs[idx]
            if input_noise is not None:
                xb = input_noise(xb, rng)
            yb = targets[idx]
            out, cache = net.forward(xb)
            batch_loss = loss.value(yb, out)
            if not math.isfinite(batch_loss):
                raise DivergenceError(it)
            total += batch_loss * len(idx)
            if cfg.learning_rate:
                net.apply_update(backward(net, cache, yb, loss), cfg.learning_rate)
        hist.train_loss.append(total / n)
        if validation is not None:
            v = loss.value(validation[1], net.predict(validation[0]))
            if not math.isfinite(v):
                raise DivergenceError(it)
            hist.val_loss.append(v)
            if cfg.early_stop_patience:
                if v < best_val:
                    best_val, best_params, stale = v, net.parameters(), 0
                else:
                    stale += 1
                    if stale >= cfg.early_stop_patience:
                        break
    if best_params is not None:
        net.set_parameters(best_params)
    return net, hist


# ---------------------------------------------------------------------------
# model files


def network_to_dict(net: Network) -> dict:
    return {
        "sizes": net.sizes,
        "layers": [
            {"activation": l.activation, "shape": list(l.weights.shape),
             "weights": [float(v) for v in l.weights.ravel()],
             "bias": [float(v) for v in l.bias]}
            for l in net.layers
        ],
    }


def network_from_dict(d: dict) -> Network:
    layers = []
    for rec in d["layers"]:
        w = np.array(rec["weights"], dtype=float).reshape(rec["shape"])
        layers.append(DenseLayer(w, np.array(rec["bias"], dtype=float), rec["activation"]))
    net = Network(layers)
    if net.sizes != list(d["sizes"]):
        raise ShapeError("model file sizes disagree with its layers")
    return net


def save_model(path: str | Path, net: Network, meta: dict | None = None) -> None:
    """JSON container; floats use shortest round-trip repr so reloads are bit-exact."""
    doc = {"format": "peakshave-model/1", "network": network_to_dict(net), "meta": meta or {}}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> tuple[Network, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "peakshave-model/1":
        raise ConfigError(f"{path}: not a peakshave model file")
    return network_from_dict(doc["network"]), doc.get("meta", {})
