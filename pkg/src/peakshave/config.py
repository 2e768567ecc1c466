"""Declarative run configuration (JSON), validated before any computation."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .bess import BessConfig, PeakWindow
from .curves import CorruptionMask
from .errors import ConfigError, PeakShaveError
from .nn import Loss, TrainConfig, WeightedMseConfig
from .sae import PROTOCOLS, SaeSpec

CONFIG_ENV = "PEAKSHAVE_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    layer_sizes: str = "48-24-12-24-48"
    activation: str = "sigmoid"
    loss: str = "weighted_mse"
    alpha_beta_mode: str = "eq7"
    alpha_beta_ratio: float = 1.0
    mask_first: int = 36
    mask_last: int = 48
    mask_value: float = 0.66
    protocol: str = "masked"
    sweep_protocol: str = "clean"
    learning_rate: float = 2.0
    max_iterations: int = 800
    pretrain_iterations: int = 200
    batch_size: int = 16
    init_scale: float | None = None
    early_stop_patience: int = 0
    train_fraction: float = 45000 / 52975
    folds: int = 5
    seed: int = 0
    capacity_kwh: float = 500.0
    power_limit_kw: float | None = None
    initial_soc: float = 1.0
    window_start: int = 29
    window_end: int = 40
    threshold_kw: float = 150.0
    ann_hidden: int = 24
    ann_learning_rate: float = 2.0
    ann_iterations: int = 800
    elm_hidden: int = 200
    n_jobs: int = 1

    def __post_init__(self):
        if self.alpha_beta_mode not in ("eq7", "fixed"):
            raise ConfigError("alpha_beta_mode must be 'eq7' or 'fixed'")
        for name in ("protocol", "sweep_protocol"):
            if getattr(self, name) not in PROTOCOLS:
                raise ConfigError(f"{name} must be one of {PROTOCOLS}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.n_jobs == 0:
            raise ConfigError("n_jobs must be nonzero")
        try:
            self.spec()
            self.mask()
            self.train_config()
            self.bess()
            self.window()
            if self.loss == "weighted_mse" and self.alpha_beta_mode == "fixed":
                self.training_loss()
        except PeakShaveError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "RunConfig":
        """Read ``path`` (or the file named by ``$PEAKSHAVE_CONFIG``); overrides win."""
        path = path or os.environ.get(CONFIG_ENV)
        d: dict = {}
        if path:
            try:
                d = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(d, dict):
                raise ConfigError(f"config {path} must hold a JSON object")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def spec(self) -> SaeSpec:
        return SaeSpec.parse(self.layer_sizes, activation=self.activation, loss=self.loss)

    def mask(self) -> CorruptionMask:
        return CorruptionMask.from_slot_range(self.mask_first, self.mask_last, self.mask_value)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.max_iterations, self.batch_size, self.seed,
                           self.init_scale, self.early_stop_patience)

    def pretrain_config(self) -> TrainConfig:
        return self.train_config().replace(max_iterations=self.pretrain_iterations,
                                           early_stop_patience=0)

    def ann_config(self) -> TrainConfig:
        return TrainConfig(self.ann_learning_rate, self.ann_iterations, self.batch_size, self.seed)

    def training_loss(self) -> Loss | None:
        """Explicit loss for fixed-ratio weighting; ``None`` lets the spec derive it."""
        if self.loss == "weighted_mse" and self.alpha_beta_mode == "fixed":
            return Loss("weighted_mse", weighted=WeightedMseConfig.from_ratio(
                tuple(self.mask().masked), self.alpha_beta_ratio))
        return None

    def bess(self) -> BessConfig:
        return BessConfig(self.capacity_kwh, self.power_limit_kw, self.initial_soc)

    def window(self) -> PeakWindow:
        return PeakWindow(self.window_start, self.window_end)
