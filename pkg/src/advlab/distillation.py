"""Defensive distillation: teacher at temperature T, soft labels, student.

The teacher is trained from scratch with its log-softmax at temperature T
(default 100). Its temperature-T probability outputs become the training
targets of a fresh same-architecture student, which also trains at T. The
student is then deployed, evaluated, and attacked at temperature 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, fgsm_sweep
from .dataset import LabeledDataset
from .evaluation import EvalReport
from .network import Network, predict_log_probs
from .training import BATCH_SIZE, EPOCHS, TrainLog, _optimize

__all__ = [
    "DistillConfig",
    "make_soft_labels",
    "save_soft_labels",
    "load_soft_labels",
    "distill",
    "distilled_sweep",
]


@dataclass(frozen=True)
class DistillConfig:
    """Distillation hyperparameters; optimizer settings match baseline training."""

    temperature: float = 100.0
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"DistillConfig: temperature must be positive, got {self.temperature}")
        if self.epochs < 0:
            raise ValueError(f"DistillConfig: epochs must be >= 0, got {self.epochs}")


def make_soft_labels(
    teacher: Network,
    dataset: LabeledDataset,
    temperature: float,
    chunk: int = 512,
) -> np.ndarray:
    """Per-example class probabilities from the teacher at the given temperature."""
    log_probs = predict_log_probs(teacher, dataset.images, temperature=temperature, chunk=chunk)
    return np.exp(log_probs)


def save_soft_labels(path, soft_labels: np.ndarray) -> None:
    """Cache layout: u32 count, u32 class count, then row-major f64 rows."""
    arr = np.asarray(soft_labels, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def load_soft_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: soft-label cache header truncated")
    count, classes = struct.unpack("<II", raw[:8])
    expected = 8 + 8 * count * classes
    if len(raw) != expected:
        raise ValueError(f"{path}: soft-label cache has {len(raw)} bytes, expected {expected}")
    rows = np.frombuffer(raw, dtype="<f8", offset=8).reshape(count, classes)
    if rows.size and (rows.min() < 0.0 or np.abs(rows.sum(axis=1) - 1.0).max() > 1e-6):
        raise ValueError(f"{path}: soft-label rows are not probability vectors")
    return rows.astype(np.float64)


def distill(
    student: Network,
    train_set: LabeledDataset,
    soft_labels: np.ndarray,
    val_set: LabeledDataset,
    config: DistillConfig = DistillConfig(),
    seed: int = 0,
) -> tuple[Network, TrainLog]:
    """Train a fresh student on the teacher's soft labels at temperature T.

    ``soft_labels`` must align index-for-index with ``train_set``. The
    scheduler monitors the eval-mode NLL of the hard validation labels at
    the training temperature. The student keeps T as its stored temperature
    so checkpoints record their provenance.
    """
    soft = np.asarray(soft_labels, dtype=np.float64)
    if soft.shape != (len(train_set), 10):
        raise ValueError(
            f"distill: soft labels {soft.shape} do not align with "
            f"{len(train_set)} training examples"
        )
    student.temperature = float(config.temperature)
    return _optimize(
        student,
        train_set.images,
        soft,
        val_set,
        config.epochs,
        config.batch_size,
        seed,
    )


def distilled_sweep(
    student: Network,
    test_set: LabeledDataset,
    config: AttackConfig = AttackConfig(),
) -> EvalReport:
    """FGSM sweep of the distilled model, attacked and classified at T=1."""
    report = fgsm_sweep(student, test_set, config)
    report.metadata["attack"] = "fgsm-distilled"
    return report
