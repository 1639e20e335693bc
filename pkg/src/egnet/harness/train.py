"""Mini-batch training with SGD or Adam on a mean-squared-error loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..errors import TrainingError, ValidationError
from ..rng import derive_seed
from .data import Sample

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 16
    optimizer: str = "adam"
    seed: int = 0
    loss: str = "mse"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValidationError(f"epochs must be a positive integer, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValidationError(f"batch size must be a positive integer, got {self.batch_size}")
        # lr = 0 is allowed: a frozen run is a useful control.
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ValidationError(f"learning rate must be finite and >= 0, got {self.lr}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "mse":
            raise ValidationError(f"unknown loss {self.loss!r}")


class Sgd:
    def __init__(self, params: list, lr: float):
        self.params, self.lr = params, lr

    def step(self):
        for p, g in self.params:
            p -= self.lr * g


class Adam:
    def __init__(self, params: list, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p, _ in params]
        self.v = [np.zeros_like(p) for p, _ in params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for (p, g), m, v in zip(self.params, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(model, cfg: TrainConfig):
    params = list(model.parameters())
    if cfg.optimizer == "sgd":
        return Sgd(params, cfg.lr)
    return Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)


def mse(pred: np.ndarray, target: np.ndarray) -> tuple:
    """Loss and its gradient w.r.t. ``pred``."""
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


def evaluate(model, data: Sequence[Sample]) -> float:
    """Mean per-sample loss over ``data``."""
    return float(np.mean([mse(model.forward(s.graph)[0], s.target)[0] for s in data]))


@dataclass
class History:
    train_loss: List[float] = field(default_factory=list)  # per epoch, mean of batch losses
    eval_loss: List[float] = field(default_factory=list)
    step_loss: List[float] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_eval_loss: Optional[float] = None

    @property
    def final_train_loss(self) -> float:
        return self.train_loss[-1] if self.train_loss else self.initial_train_loss


def train(model, data: Sequence[Sample], cfg: TrainConfig, eval_data: Optional[Sequence[Sample]] = None) -> tuple:
    """Optimise ``model`` in place; returns ``(model, History)``.

    Each epoch visits ``data`` in a seed-determined shuffled order.  Batch
    gradients are summed over samples in that order, so runs repeat bitwise
    for a fixed seed.
    """
    data = list(data)
    if not data:
        raise ValidationError("training data is empty")
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    opt = make_optimizer(model, cfg)
    hist = History(initial_train_loss=evaluate(model, data))
    if eval_data:
        hist.initial_eval_loss = evaluate(model, eval_data)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        epoch_total = 0.0
        for bi, start in enumerate(range(0, len(data), cfg.batch_size)):
            batch = [data[k] for k in order[start : start + cfg.batch_size]]
            model.zero_grad()
            batch_loss = 0.0
            for s in batch:
                pred, cache = model.forward(s.graph)
                loss, g_pred = mse(pred, s.target)
                batch_loss += loss
                model.backward(cache, g_pred / len(batch))
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.step()
            hist.step_loss.append(batch_loss / len(batch))
            epoch_total += batch_loss
        hist.train_loss.append(epoch_total / len(data))
        if eval_data:
            hist.eval_loss.append(evaluate(model, eval_data))
        log.debug("epoch %d train %.6g", epoch, hist.train_loss[-1])
    return model, hist
