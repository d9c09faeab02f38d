"""Mini-batch Adam training with plateau step-size halving and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..data import DatasetSplit, SequenceSample, split_dataset, stack_samples
from ..errors import ConfigError, TrainingError
from . import seq2seq as s2s

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    early_stop_patience: int = 15
    max_epochs: int = 200
    batch_size: int = 128
    seed: int = 0
    teacher_forcing: float = 0.5
    hidden_size: int = 64
    num_layers: int = 1
    heading_encoding: str = "scalar"
    val_fraction: float = 0.1
    min_delta: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        positive = ("learning_rate", "plateau_patience", "early_stop_patience", "max_epochs", "batch_size", "hidden_size", "num_layers")
        for k in positive:
            if not getattr(self, k) > 0:
                raise ConfigError(f"train.{k} must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError("train.plateau_factor must be in (0, 1)")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ConfigError("train.teacher_forcing must be in [0, 1]")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("train.val_fraction must be in (0, 1)")
        if self.heading_encoding not in s2s.HEADING_ENCODINGS:
            raise ConfigError(f"train.heading_encoding must be one of {s2s.HEADING_ENCODINGS}")
        if self.min_delta < 0:
            raise ConfigError("train.min_delta must be >= 0")

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        return cls(**(d or {}))


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_seq2seq(data: DatasetSplit | list[SequenceSample], cfg: TrainConfig | None = None):
    """Train on ``data.train`` (or a plain sample list).

    A seeded, vehicle-granular ``val_fraction`` of the training samples is
    held out for validation.  Returns the best-validation parameters and the
    per-epoch history (epoch, train_loss, val_loss, learning_rate).
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    samples = data.train if isinstance(data, DatasetSplit) else list(data)
    if not samples:
        raise ConfigError("training set is empty")
    inner = split_dataset(samples, cfg.val_fraction, cfg.seed)
    Xtr, Ytr = stack_samples(inner.train)
    Xva, Yva = stack_samples(inner.test)

    rng = np.random.default_rng(cfg.seed)
    norm = s2s.Normalization.fit(Xtr, Ytr, cfg.heading_encoding)
    params = s2s.init_params(cfg.hidden_size, norm, cfg.num_layers, seed=cfg.seed, config=asdict(cfg))
    opt = Adam(params.weights, cfg.beta1, cfg.beta2, cfg.adam_eps)

    lr = cfg.learning_rate
    best_val = math.inf
    best = params.copy()
    since_best = 0
    history = []
    n = len(Xtr)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            mask = rng.random((len(idx), Ytr.shape[1])) < cfg.teacher_forcing
            mask[:, 0] = False
            value, grads = s2s.loss_and_gradients(params, Xtr[idx], Ytr[idx], mask)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}", epoch)
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingError(f"non-finite gradients at epoch {epoch}", epoch)
            opt.step(params.weights, grads, lr)
            total += value * len(idx)
        val = s2s.batch_loss(params, Xva, Yva)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}", epoch)
        history.append({"epoch": epoch, "train_loss": total / n, "val_loss": val, "learning_rate": lr})
        log.debug("epoch %d train %.4f val %.4f lr %.2e", epoch, total / n, val, lr)

        if val < best_val - cfg.min_delta:
            best_val = val
            best = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
            if since_best % cfg.plateau_patience == 0:
                lr *= cfg.plateau_factor
    best.config = asdict(cfg)
    return best, history
