"""Adam optimization with plateau-based learning-rate reduction.

Defaults follow the training protocol this lab reproduces: Adam at
lr 1e-4 with betas (0.9, 0.999), NLL loss, a min-mode plateau scheduler
(factor 0.1, patience 3), batch size 64, 10 epochs. Everything is a pure
function of (initial parameters, data, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward, nll_loss, no_grad, soft_cross_entropy
from .dataset import LabeledDataset
from .network import Network

__all__ = [
    "LEARNING_RATE",
    "BETA1",
    "BETA2",
    "ADAM_EPS",
    "SCHED_FACTOR",
    "SCHED_PATIENCE",
    "BATCH_SIZE",
    "EPOCHS",
    "AdamState",
    "adam_step",
    "PlateauScheduler",
    "TrainLog",
    "fit",
    "validation_nll",
]

LEARNING_RATE = 1e-4
BETA1, BETA2 = 0.9, 0.999
ADAM_EPS = 1e-8
SCHED_FACTOR = 0.1
SCHED_PATIENCE = 3
BATCH_SIZE = 64
EPOCHS = 10


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    lr: float = LEARNING_RATE
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, named_params: list[tuple[str, Tensor]]) -> None:
    """One bias-corrected Adam update, in place, reading each tensor's grad."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, param in named_params:
        grad = param.grad
        if grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        if grad.shape != param.shape:
            raise ValueError(
                f"adam_step: gradient shape {grad.shape} does not match "
                f"parameter {name!r} shape {param.shape}"
            )
        if not np.isfinite(grad).all():
            raise ValueError(f"adam_step: non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * np.square(grad)
        param.data -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


@dataclass
class PlateauScheduler:
    """Min-mode ReduceLROnPlateau: shrink lr when val loss stops improving.

    Any strict decrease counts as improvement. The stale counter resets to 0
    both on improvement and after a reduction; the rate never increases.
    """

    lr: float = LEARNING_RATE
    factor: float = SCHED_FACTOR
    patience: int = SCHED_PATIENCE
    best: float = math.inf
    stale: int = 0

    def step(self, val_loss: float) -> float:
        if not math.isfinite(val_loss):
            raise ValueError(f"scheduler: validation loss must be finite, got {val_loss}")
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale > self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


@dataclass
class TrainLog:
    """One (epoch, train loss, val loss, lr) row per completed epoch."""

    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val_loss: float, lr: float) -> None:
        self.rows.append((epoch, train_loss, val_loss, lr))

    def write_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss,lr"]
        for epoch, train_loss, val_loss, lr in self.rows:
            lines.append(f"{epoch},{train_loss!r},{val_loss!r},{lr!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def validation_nll(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    temperature: float | None = None,
    chunk: int = 512,
) -> float:
    """Eval-mode mean NLL over a whole set, computed chunk-wise."""
    temp = net.temperature if temperature is None else temperature
    total = 0.0
    with no_grad():
        for start in range(0, len(images), chunk):
            part = net.forward(images[start : start + chunk], mode="eval", temperature=temp)
            idx = labels[start : start + chunk]
            total -= float(part.data[np.arange(len(idx)), idx].sum())
    return total / len(images)


def fit(
    net: Network,
    train_set: LabeledDataset,
    val_set: LabeledDataset,
    epochs: int = EPOCHS,
    batch_size: int = BATCH_SIZE,
    seed: int = 0,
) -> tuple[Network, TrainLog]:
    """Train with hard labels at the network's own temperature."""
    return _optimize(net, train_set.images, train_set.labels, val_set, epochs, batch_size, seed)


def _optimize(
    net: Network,
    images: np.ndarray,
    targets: np.ndarray,
    val_set: LabeledDataset,
    epochs: int,
    batch_size: int,
    seed: int,
) -> tuple[Network, TrainLog]:
    """Shared loop: targets are class indices (NLL) or soft rows (cross-entropy).

    One seeded generator drives both the per-epoch shuffles and the dropout
    masks, consumed in a fixed order, so the whole run is reproducible.
    """
    if len(images) == 0 or len(val_set) == 0:
        raise ValueError("fit: training and validation sets must be non-empty")
    if batch_size < 1:
        raise ValueError(f"fit: batch_size must be >= 1, got {batch_size}")
    soft = targets.ndim == 2
    rng = np.random.default_rng(seed)
    adam = AdamState()
    scheduler = PlateauScheduler()
    log = TrainLog()
    count = len(images)
    params = net.parameters()
    for epoch in range(1, epochs + 1):
        net.train()
        perm = rng.permutation(count)
        running = 0.0
        for start in range(0, count, batch_size):
            idx = perm[start : start + batch_size]
            log_probs = net.forward(Tensor(images[idx]), rng)
            if soft:
                loss = soft_cross_entropy(log_probs, targets[idx])
            else:
                loss = nll_loss(log_probs, targets[idx])
            for _, p in params:
                p.zero_grad()
            backward(loss)
            adam_step(adam, params)
            running += loss.item() * len(idx)
        net.eval()
        val_loss = validation_nll(net, val_set.images, val_set.labels)
        adam.lr = scheduler.step(val_loss)
        log.append(epoch, running / count, val_loss, adam.lr)
    net.eval()
    return net, log
