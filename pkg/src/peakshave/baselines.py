"""Comparison models: denoising autoencoder, feedforward regressor and
extreme learning machine, plus the fold-by-fold comparison table.

The ANN and ELM map the kept (off-peak) slots straight to the masked slots.
All three are scored with :func:`peakshave.sae.masked_errors`, the same
routine used for the SAE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curves import CorruptionMask, Dataset, NormalizationContext, kfold_indices
from .errors import ConfigError, NumericalError
from .nn import Loss, Network, TrainConfig, _activate, train
from .sae import SaeSpec, evaluate_peak_rmse, fit_sae, masked_errors, pretrain_greedy


@dataclass(frozen=True)
class DaeNoise:
    """Per-presentation masking noise: each slot is masked with probability ``rate``."""

    rate: float
    mask_value: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError("noise rate must lie in [0, 1]")

    def __call__(self, xb: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.rate == 0.0:
            return xb
        hit = rng.random(xb.shape) < self.rate
        return np.where(hit, self.mask_value, xb)


def train_dae(spec: SaeSpec, train_pu: np.ndarray, cfg: TrainConfig, noise: DaeNoise,
              pretrain_cfg: TrainConfig | None = None, pretrained: Network | None = None,
              validation_pu: np.ndarray | None = None) -> Network:
    """Same geometry and pretraining as the SAE, fine-tuned on freshly corrupted inputs."""
    x = np.asarray(train_pu, dtype=float)
    net = pretrained if pretrained is not None else pretrain_greedy(spec, x, pretrain_cfg or cfg)
    val = (validation_pu, validation_pu) if validation_pu is not None else None
    net, _ = train(net, x, x, cfg, Loss("mse"), validation=val, input_noise=noise)
    return net


def train_ann(layer_sizes, inputs: np.ndarray, targets: np.ndarray, cfg: TrainConfig,
              activation: str = "sigmoid", validation: tuple | None = None) -> Network:
    """Supervised regressor from kept slots to masked slots, linear output, MSE."""
    sizes = [int(s) for s in layer_sizes]
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if sizes[0] != inputs.shape[1] or sizes[-1] != targets.shape[1]:
        raise ConfigError(f"layer sizes {sizes} do not match {inputs.shape[1]} inputs "
                          f"and {targets.shape[1]} targets")
    acts = [activation] * (len(sizes) - 2) + ["linear"]
    net = Network.initialize(sizes, acts, np.random.default_rng(cfg.seed), cfg.init_scale)
    net, _ = train(net, inputs, targets, cfg, Loss("mse"), validation=validation)
    return net


@dataclass(frozen=True)
class ElmModel:
    hidden_weights: np.ndarray  # (hidden, n_in)
    hidden_bias: np.ndarray
    hidden_activation: str
    output_weights: np.ndarray  # (hidden, n_out)

    def hidden(self, x: np.ndarray) -> np.ndarray:
        return _activate(self.hidden_activation, np.asarray(x, dtype=float) @ self.hidden_weights.T
                         + self.hidden_bias)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.hidden(x) @ self.output_weights


def solve_output_weights(h: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """Least-squares output weights via SVD; ridge-regularized on rank deficiency."""
    beta, _, rank, _ = np.linalg.lstsq(h, y, rcond=None)
    if rank < h.shape[1]:
        # stacked form keeps the conditioning of h rather than h.T @ h
        aug_h = np.vstack([h, math.sqrt(ridge) * np.eye(h.shape[1])])
        aug_y = np.vstack([y, np.zeros((h.shape[1], y.shape[1]))])
        beta = np.linalg.lstsq(aug_h, aug_y, rcond=None)[0]
    if not np.all(np.isfinite(beta)):
        raise NumericalError("ELM output-weight solve produced non-finite values")
    return beta


def train_elm(hidden_size: int, inputs: np.ndarray, targets: np.ndarray, seed: int,
              activation: str = "sigmoid", ridge: float = 1e-8) -> ElmModel:
    if hidden_size < 1:
        raise ConfigError("hidden_size must be >= 1")
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, (hidden_size, inputs.shape[1]))
    b = rng.uniform(-1.0, 1.0, hidden_size)
    w.setflags(write=False)
    b.setflags(write=False)
    model = ElmModel(w, b, activation, np.zeros((hidden_size, targets.shape[1])))
    beta = solve_output_weights(model.hidden(inputs), targets, ridge)
    return ElmModel(w, b, activation, beta)


# ---------------------------------------------------------------------------
# fold-by-fold comparison


@dataclass(frozen=True)
class ComparisonRow:
    fold: int
    ann_rmse: float
    elm_rmse: float
    sae_rmse: float


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    def means(self) -> tuple[float, float, float]:
        a = np.array([(r.ann_rmse, r.elm_rmse, r.sae_rmse) for r in self.rows])
        return tuple(float(v) for v in a.mean(axis=0))

    def to_csv(self) -> str:
        lines = ["fold,ann_rmse,elm_rmse,sae_rmse"]
        for r in self.rows:
            lines.append(f"{r.fold},{r.ann_rmse!r},{r.elm_rmse!r},{r.sae_rmse!r}")
        m = self.means()
        lines.append(f"mean,{m[0]!r},{m[1]!r},{m[2]!r}")
        return "\n".join(lines) + "\n"


def compare_models(data: Dataset, mask: CorruptionMask, spec: SaeSpec, sae_cfg: TrainConfig,
                   ann_cfg: TrainConfig, *, pretrain_cfg: TrainConfig | None = None,
                   ann_hidden: int = 24, elm_hidden: int = 200, k: int = 5,
                   seed: int = 0) -> ComparisonTable:
    """Cross-validated masked-slot RMSE of the ANN, ELM and SAE on the same folds."""
    norm = NormalizationContext.from_dataset(data)
    kept, masked = mask.kept, mask.masked
    rows = []
    for f, (tr_idx, va_idx) in enumerate(kfold_indices(len(data), k, seed), start=1):
        tr, va = data.subset(tr_idx), data.subset(va_idx)
        x_tr, x_va = tr.values / norm.base_kw, va.values / norm.base_kw
        ann = train_ann([kept.size, ann_hidden, masked.size], x_tr[:, kept], x_tr[:, masked],
                        ann_cfg.replace(seed=ann_cfg.seed + f))
        ann_rmse = masked_errors(va.values, np.maximum(ann.predict(x_va[:, kept]), 0) * norm.base_kw,
                                 masked)[0]
        elm = train_elm(elm_hidden, x_tr[:, kept], x_tr[:, masked], seed + f)
        elm_rmse = masked_errors(va.values, np.maximum(elm.predict(x_va[:, kept]), 0) * norm.base_kw,
                                 masked)[0]
        fit = fit_sae(spec, tr, mask, sae_cfg, pretrain_cfg, norm=norm)
        sae_rmse = evaluate_peak_rmse(fit.model, va)[0]
        rows.append(ComparisonRow(f, ann_rmse, elm_rmse, sae_rmse))
    return ComparisonTable(tuple(rows))
