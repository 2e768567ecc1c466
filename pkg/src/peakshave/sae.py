"""Stacked autoencoders for masked peak-curve reconstruction.

Training is greedy: one shallow autoencoder per encoder level, each fed the
codes of the level below, then the assembled symmetric network is
fine-tuned end to end on masked inputs against clean targets.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .curves import (
    SLOTS,
    CorruptionMask,
    DailyCurve,
    Dataset,
    NormalizationContext,
    corrupt_array,
    kfold_indices,
    split,
)
from .errors import (
    ConfigError,
    DivergenceError,
    InsufficientData,
    InvalidSpec,
    MaskMismatch,
)
from .nn import (
    DenseLayer,
    History,
    Loss,
    Network,
    TrainConfig,
    WeightedMseConfig,
    _activate,
    load_model,
    save_model,
    train,
)


@dataclass(frozen=True)
class SaeSpec:
    layer_sizes: tuple[int, ...] = (48, 24, 12, 24, 48)
    activation: str = "sigmoid"
    loss: str = "mse"
    weighted_cfg: WeightedMseConfig | None = None
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3 or len(sizes) % 2 == 0:
            raise InvalidSpec(f"layer list must have odd length >= 3, got {list(sizes)}")
        if sizes != sizes[::-1]:
            raise InvalidSpec(f"layer list {list(sizes)} is not palindromic")
        if sizes[0] != SLOTS:
            raise InvalidSpec(f"first and last layers must have {SLOTS} units")
        half = sizes[: len(sizes) // 2 + 1]
        if any(b >= a for a, b in zip(half, half[1:])) or half[-1] < 1:
            raise InvalidSpec(f"encoder sizes {list(half)} must strictly decrease to the bottleneck")
        if self.loss not in ("mse", "mape", "weighted_mse"):
            raise InvalidSpec(f"unknown loss {self.loss!r}")
        _activate(self.activation, np.zeros(1))
        _activate(self.output_activation, np.zeros(1))

    @classmethod
    def parse(cls, text: str, **kw) -> "SaeSpec":
        """Build from a dash-separated size list such as ``"48-24-12-24-48"``."""
        try:
            sizes = tuple(int(p) for p in text.split("-"))
        except ValueError:
            raise InvalidSpec(f"cannot parse layer list {text!r}") from None
        return cls(sizes, **kw)

    @property
    def name(self) -> str:
        return "-".join(str(s) for s in self.layer_sizes)

    @property
    def depth(self) -> int:
        """Number of encoder levels (greedy stages)."""
        return len(self.layer_sizes) // 2

    @property
    def bottleneck(self) -> int:
        return self.layer_sizes[self.depth]

    def layer_activations(self) -> list[str]:
        n = len(self.layer_sizes) - 1
        return [self.activation] * (n - 1) + [self.output_activation]

    def greedy_stages(self) -> list[tuple[int, int]]:
        return [(self.layer_sizes[i], self.layer_sizes[i + 1]) for i in range(self.depth)]

    def resolve_loss(self, corrupted: Sequence[int], train_pu: np.ndarray | None = None) -> Loss:
        """The training loss; weighted MSE without explicit weights derives them from data."""
        if self.loss != "weighted_mse":
            return Loss(self.loss)
        cfg = self.weighted_cfg
        if cfg is None:
            if train_pu is None:
                raise ConfigError("weighted_mse without weights needs training data")
            cfg = WeightedMseConfig.from_data(corrupted, train_pu)
        return Loss("weighted_mse", weighted=cfg)

    def to_dict(self) -> dict:
        d = {"layer_sizes": list(self.layer_sizes), "activation": self.activation,
             "loss": self.loss, "output_activation": self.output_activation}
        if self.weighted_cfg is not None:
            d["weighted_cfg"] = {"alpha": self.weighted_cfg.alpha, "beta": self.weighted_cfg.beta,
                                 "corrupted": list(self.weighted_cfg.corrupted),
                                 "n_dims": self.weighted_cfg.n_dims}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SaeSpec":
        w = d.get("weighted_cfg")
        return cls(tuple(d["layer_sizes"]), d.get("activation", "sigmoid"), d.get("loss", "mse"),
                   WeightedMseConfig(**w) if w else None, d.get("output_activation", "linear"))


def pretrain_greedy(spec: SaeSpec, train_pu: np.ndarray, cfg: TrainConfig,
                    stage_log: list | None = None) -> Network:
    """Greedy layer-wise pretraining on clean data.

    Each stage's decoder is thrown away; the assembled network's decoder
    layers start as transposes of the trained encoders with zero bias.
    ``stage_log`` receives ``(n_in, n_hidden, History)`` per stage.
    """
    codes = np.asarray(train_pu, dtype=float)
    acts = spec.layer_activations()
    n_layers = len(acts)
    encoders, decoders = [], []
    for stage, (n_in, n_hid) in enumerate(spec.greedy_stages()):
        dec_act = acts[n_layers - 1 - stage]
        rng = np.random.default_rng([cfg.seed, stage])
        shallow = Network.initialize([n_in, n_hid, n_in], [acts[stage], dec_act], rng, cfg.init_scale)
        try:
            shallow, hist = train(shallow, codes, codes, cfg.replace(seed=cfg.seed + 1000 * (stage + 1)))
        except DivergenceError as exc:
            raise DivergenceError(exc.iteration, stage=stage) from exc
        if stage_log is not None:
            stage_log.append((n_in, n_hid, hist))
        enc = shallow.layers[0].copy()
        encoders.append(enc)
        decoders.append(DenseLayer(enc.weights.T.copy(), np.zeros(n_in), dec_act))
        codes = _activate(enc.activation, codes @ enc.weights.T + enc.bias)
    return Network(encoders + decoders[::-1])


def fine_tune(net: Network, train_pu: np.ndarray, cfg: TrainConfig, loss: Loss,
              mask: CorruptionMask, validation_pu: np.ndarray | None = None,
              random_mask: bool = False) -> tuple[Network, History]:
    """End-to-end training from masked inputs to clean targets.

    With ``random_mask`` each presentation masks a fresh random slot set of
    the same size as ``mask`` instead of the fixed window.
    """
    x = np.asarray(train_pu, dtype=float)
    noise = None
    if random_mask:
        noise = _random_window_noise(mask)
        inputs = x
    else:
        inputs = corrupt_array(x, mask)
    val = None
    if validation_pu is not None:
        v = np.asarray(validation_pu, dtype=float)
        val = (corrupt_array(v, mask), v)
    return train(net, inputs, x, cfg, loss, validation=val, input_noise=noise)


def _random_window_noise(mask: CorruptionMask):
    n_masked = mask.n_masked

    def noise(xb: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = xb.copy()
        for row in out:
            row[rng.choice(row.shape[0], n_masked, replace=False)] = mask.mask_value
        return out

    return noise


@dataclass
class SaeModel:
    """A trained reconstruction network plus everything needed to use it."""

    network: Network
    spec: SaeSpec
    mask: CorruptionMask
    norm: NormalizationContext
    config: TrainConfig = field(default_factory=TrainConfig)
    loss: Loss = field(default_factory=Loss)

    def save(self, path) -> None:
        meta = {
            "spec": self.spec.to_dict(),
            "mask": {"keep": [int(k) for k in self.mask.keep], "mask_value": self.mask.mask_value},
            "base_kw": self.norm.base_kw,
            "train_config": asdict(self.config),
            "loss": {"kind": self.loss.kind, "epsilon": self.loss.epsilon,
                     "alpha": self.loss.weighted.alpha if self.loss.weighted else None,
                     "beta": self.loss.weighted.beta if self.loss.weighted else None},
        }
        save_model(path, self.network, meta)

    @classmethod
    def load(cls, path) -> "SaeModel":
        net, meta = load_model(path)
        spec = SaeSpec.from_dict(meta["spec"])
        mask = CorruptionMask(np.array(meta["mask"]["keep"], dtype=bool), meta["mask"]["mask_value"])
        lm = meta.get("loss", {})
        if lm.get("kind") == "weighted_mse":
            loss = Loss("weighted_mse", lm.get("epsilon", 1e-6),
                        WeightedMseConfig(lm["alpha"], lm["beta"], tuple(mask.masked), SLOTS))
        else:
            loss = Loss(lm.get("kind", "mse"), lm.get("epsilon", 1e-6))
        return cls(net, spec, mask, NormalizationContext(meta["base_kw"]),
                   TrainConfig(**meta["train_config"]), loss)


PROTOCOLS = ("masked", "clean")


@dataclass
class FitResult:
    model: SaeModel
    pretrained: Network
    history: History


def fit_sae(spec: SaeSpec, train_data: Dataset, mask: CorruptionMask, cfg: TrainConfig,
            pretrain_cfg: TrainConfig | None = None, *, validation: Dataset | None = None,
            norm: NormalizationContext | None = None, pretrained: Network | None = None,
            loss: Loss | None = None, protocol: str = "masked",
            random_mask: bool = False) -> FitResult:
    """Pretrain (unless ``pretrained`` is given), then fine-tune.

    ``protocol="masked"`` fine-tunes on inputs corrupted with ``mask``;
    ``protocol="clean"`` fine-tunes on clean curves and applies the mask only
    at reconstruction time, so the masking constant acts as a tuning knob.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    norm = norm or NormalizationContext.from_dataset(train_data)
    x = train_data.values / norm.base_kw
    if pretrained is None:
        pretrained = pretrain_greedy(spec, x, pretrain_cfg or cfg)
    loss = loss or spec.resolve_loss(tuple(mask.masked), x)
    val = validation.values / norm.base_kw if validation is not None else None
    train_mask = mask if protocol == "masked" else CorruptionMask.keep_all(mask.keep.shape[0])
    net, hist = fine_tune(pretrained, x, cfg, loss, train_mask, val, random_mask)
    return FitResult(SaeModel(net, spec, mask, norm, cfg, loss), pretrained, hist)


# ---------------------------------------------------------------------------
# reconstruction and evaluation


def _unpack(model, mask: CorruptionMask | None, norm: NormalizationContext | None):
    if isinstance(model, SaeModel):
        if mask is not None and not mask.same_geometry(model.mask):
            raise MaskMismatch("mask geometry differs from the one the model was trained with")
        return model.network, model.mask, norm or model.norm
    if mask is None or norm is None:
        raise ConfigError("a bare network needs an explicit mask and normalization context")
    return model, mask, norm


def reconstruct_array(model, observed_kw: np.ndarray, mask: CorruptionMask | None = None,
                      norm: NormalizationContext | None = None) -> np.ndarray:
    """Batch reconstruction in kW: observed values on kept slots, network output on masked ones."""
    net, mask, norm = _unpack(model, mask, norm)
    obs = np.asarray(observed_kw, dtype=float)
    if obs.shape[-1] != mask.keep.shape[0]:
        raise MaskMismatch(f"mask covers {mask.keep.shape[0]} slots, data has {obs.shape[-1]}")
    pred = net.predict(corrupt_array(obs / norm.base_kw, mask)) * norm.base_kw
    return np.where(mask.keep, obs, np.maximum(pred, 0.0))


def reconstruct_peak(model, observed: DailyCurve, mask: CorruptionMask | None = None,
                     norm: NormalizationContext | None = None) -> DailyCurve:
    return DailyCurve(reconstruct_array(model, observed.values, mask, norm), observed.date_tag, "kW")


def masked_errors(true_kw: np.ndarray, pred_kw: np.ndarray, masked: np.ndarray,
                  epsilon: float = 1e-6) -> tuple[float, float]:
    """RMSE (kW) and MAPE (%) over the masked slots of every curve.

    ``pred_kw`` may be full curves or already restricted to the masked slots.
    """
    t = np.asarray(true_kw, dtype=float)
    p = np.asarray(pred_kw, dtype=float)
    if t.ndim == 1:
        t = t[None, :]
    if p.ndim == 1:
        p = p[None, :]
    if len(t) == 0:
        raise InsufficientData("no curves to evaluate")
    masked = np.asarray(masked, dtype=int)
    if masked.size == 0:
        raise InsufficientData("mask corrupts no slots")
    tm = t[:, masked]
    pm = p[:, masked] if p.shape[1] == t.shape[1] else p
    err = tm - pm
    rmse = math.sqrt(float(np.mean(err ** 2)))
    mape = 100.0 * float(np.mean(np.abs(err) / np.maximum(np.abs(tm), epsilon)))
    return rmse, mape


def evaluate_peak_rmse(model, test: Dataset, mask: CorruptionMask | None = None,
                       norm: NormalizationContext | None = None) -> tuple[float, float]:
    if len(test) == 0:
        raise InsufficientData("empty test set")
    net, mask, norm = _unpack(model, mask, norm)
    pred = reconstruct_array(net, test.values, mask, norm)
    return masked_errors(test.values, pred, mask.masked)


# ---------------------------------------------------------------------------
# sweeps and architecture comparison


@dataclass(frozen=True)
class SweepPoint:
    value: float
    rmse_kw: float
    mape_pct: float
    is_eq7_ratio: bool = False


@dataclass(frozen=True)
class SweepResult:
    param: str
    points: tuple[SweepPoint, ...]

    @property
    def argmin(self) -> float:
        # ties go to the smaller parameter value
        best = min(self.points, key=lambda p: (p.rmse_kw, p.value))
        return best.value

    @property
    def rmse(self) -> np.ndarray:
        return np.array([p.rmse_kw for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    def to_csv(self) -> str:
        lines = ["param,rmse_kw,mape_pct,is_argmin,is_eq7_ratio"]
        best = self.argmin
        for p in self.points:
            lines.append(f"{p.value!r},{p.rmse_kw!r},{p.mape_pct!r},"
                         f"{int(p.value == best)},{int(p.is_eq7_ratio)}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ExperimentSetup:
    """Shared protocol for sweeps: seeded split, one pretraining, one normalization."""

    train: Dataset
    test: Dataset
    norm: NormalizationContext
    pretrained: Network

    @classmethod
    def build(cls, spec: SaeSpec, data: Dataset, pretrain_cfg: TrainConfig,
              train_fraction: float = 45000 / 52975, seed: int = 0) -> "ExperimentSetup":
        n_train = int(round(train_fraction * len(data)))
        n_train = min(max(n_train, 1), len(data) - 1)
        tr, te = split(data, n_train, seed)
        norm = NormalizationContext.from_dataset(data)
        pre = pretrain_greedy(spec, tr.values / norm.base_kw, pretrain_cfg)
        return cls(tr, te, norm, pre)


def _map(fn: Callable, items: Sequence, n_jobs: int) -> list:
    if n_jobs == 1 or len(items) < 2:
        return [fn(it) for it in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(it) for it in items)


def _tagged(param: str, value: float, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DivergenceError as exc:
        raise DivergenceError(exc.iteration, f"{param}={value!r}: {exc}", exc.stage) from exc


def sweep_mask_value(spec: SaeSpec, setup: ExperimentSetup, cfg: TrainConfig,
                     grid: Sequence[float], mask: CorruptionMask, *, model: str = "sae",
                     protocol: str = "clean", n_jobs: int = 1) -> SweepResult:
    """Masked-slot RMSE as a function of the masking constant.

    Every point starts from the same pretrained network and seed. Under the
    ``clean`` protocol the SAE never sees the constant during training, so a
    single fitted model is evaluated at each grid value; under ``masked`` one
    model is fine-tuned per value. ``model="dae"`` trains the denoising
    baseline at each constant instead.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ConfigError("empty grid")
    if any(not 0.0 <= g <= 1.0 for g in grid):
        raise ConfigError("mask values must lie in [0, 1] p.u.")
    if model not in ("sae", "dae"):
        raise ConfigError(f"unknown model {model!r}")
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")

    shared = None
    if model == "sae" and protocol == "clean":
        shared = _tagged("C", grid[0], fit_sae, spec, setup.train, mask, cfg, None,
                         norm=setup.norm, pretrained=setup.pretrained, protocol="clean").model

    def point(c: float) -> SweepPoint:
        m = mask.with_value(c)
        if model == "dae":
            from .baselines import DaeNoise, train_dae

            x = setup.train.values / setup.norm.base_kw
            noise = DaeNoise(m.n_masked / m.keep.shape[0], c)
            net = _tagged("C", c, train_dae, spec, x, cfg, noise, None, setup.pretrained)
            rmse, mape = evaluate_peak_rmse(net, setup.test, m, setup.norm)
        elif shared is not None:
            rmse, mape = evaluate_peak_rmse(shared.network, setup.test, m, setup.norm)
        else:
            fit = _tagged("C", c, fit_sae, spec, setup.train, m, cfg, None,
                          norm=setup.norm, pretrained=setup.pretrained)
            rmse, mape = evaluate_peak_rmse(fit.model, setup.test)
        return SweepPoint(c, rmse, mape)

    return SweepResult("mask_value", tuple(_map(point, grid, n_jobs)))


def sweep_alpha_beta(spec: SaeSpec, setup: ExperimentSetup, cfg: TrainConfig,
                     ratios: Sequence[float], mask: CorruptionMask, *,
                     protocol: str = "masked", n_jobs: int = 1) -> SweepResult:
    """One weighted-MSE model per alpha/beta ratio.

    The ratio implied by the training data's per-slot standard deviations is
    added to the grid (if absent) and flagged.
    """
    ratios = [float(r) for r in ratios]
    if not ratios or any(not r > 0 for r in ratios):
        raise ConfigError("ratios must be positive")
    x = setup.train.values / setup.norm.base_kw
    derived = WeightedMseConfig.from_data(tuple(mask.masked), x)
    derived_ratio = derived.alpha / derived.beta
    grid = sorted(set(ratios) | {derived_ratio})

    def point(r: float) -> SweepPoint:
        loss = Loss("weighted_mse", weighted=WeightedMseConfig.from_ratio(tuple(mask.masked), r, SLOTS))
        fit = _tagged("ratio", r, fit_sae, spec, setup.train, mask, cfg, None,
                      norm=setup.norm, pretrained=setup.pretrained, loss=loss, protocol=protocol)
        rmse, mape = evaluate_peak_rmse(fit.model, setup.test)
        return SweepPoint(r, rmse, mape, r == derived_ratio)

    return SweepResult("alpha_beta", tuple(_map(point, grid, n_jobs)))


@dataclass(frozen=True)
class ArchitectureResult:
    spec: SaeSpec
    train_history: np.ndarray
    val_history: np.ndarray
    converged_loss: float
    rmse_kw: float
    mape_pct: float


def converged(history: Sequence[float], tail: float = 0.05) -> float:
    """Mean of the last ``tail`` fraction of a loss history (at least one point)."""
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        return math.nan
    k = max(1, int(math.ceil(tail * h.size)))
    return float(h[-k:].mean())


def compare_architectures(specs: Sequence[SaeSpec], data: Dataset, cfg: TrainConfig,
                          mask: CorruptionMask, *, pretrain_cfg: TrainConfig | None = None,
                          k: int = 5, seed: int = 0, n_jobs: int = 1) -> list[ArchitectureResult]:
    """K-fold cross-validated convergence histories and final metrics per architecture."""
    if not specs:
        raise ConfigError("no architectures to compare")
    folds = kfold_indices(len(data), k, seed)
    norm = NormalizationContext.from_dataset(data)

    def run(spec: SaeSpec) -> ArchitectureResult:
        tr_h, va_h, rmses, mapes = [], [], [], []
        for tr_idx, va_idx in folds:
            tr, va = data.subset(tr_idx), data.subset(va_idx)
            fit = fit_sae(spec, tr, mask, cfg, pretrain_cfg, validation=va, norm=norm)
            tr_h.append(fit.history.train_loss)
            va_h.append(fit.history.val_loss)
            r, m = evaluate_peak_rmse(fit.model, va)
            rmses.append(r)
            mapes.append(m)
        n = min(len(h) for h in tr_h)
        tr_mean = np.mean([h[:n] for h in tr_h], axis=0) if n else np.zeros(0)
        va_mean = np.mean([h[:n] for h in va_h], axis=0) if n else np.zeros(0)
        return ArchitectureResult(spec, tr_mean, va_mean, converged(va_mean),
                                  float(np.mean(rmses)), float(np.mean(mapes)))

    return _map(run, list(specs), n_jobs)
