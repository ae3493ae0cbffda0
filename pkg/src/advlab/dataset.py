"""MNIST ingestion: IDX parsing, normalization, the 50k/10k split, batching.

IDX files are big-endian: a magic word (0x00000803 for images, 0x00000801
for labels), the counts/dims, then the raw byte payload. Files may be
gzip-compressed; that is detected from the 0x1f 0x8b prefix.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

__all__ = [
    "IdxFormatError",
    "IdxMagicError",
    "IdxTruncationError",
    "IdxLabelError",
    "LabeledDataset",
    "parse_idx_images",
    "parse_idx_labels",
    "normalize",
    "split",
    "batches",
    "read_idx_bytes",
    "load_dataset",
    "load_mnist_train",
    "TRAIN_IMAGES_STEM",
    "TRAIN_LABELS_STEM",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
TRAIN_IMAGES_STEM = "train-images-idx3-ubyte"
TRAIN_LABELS_STEM = "train-labels-idx1-ubyte"

TRAIN_SPLIT = 50_000
TOTAL_TRAIN_FILE = 60_000


class IdxFormatError(ValueError):
    """Base class for malformed IDX input."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncationError(IdxFormatError):
    pass


class IdxLabelError(IdxFormatError):
    pass


def parse_idx_images(raw: bytes) -> np.ndarray:
    """Decode an IDX image file into a (count, rows, cols) uint8 array."""
    if len(raw) < 4:
        raise IdxTruncationError(f"image file too short for a magic word ({len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != IMAGES_MAGIC:
        raise IdxMagicError(f"image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
    if len(raw) < 16:
        raise IdxTruncationError(f"image header needs 16 bytes, got {len(raw)}")
    _, count, rows, cols = struct.unpack(">IIII", raw[:16])
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise IdxTruncationError(f"image payload has {len(raw)} bytes, expected {expected}")
    if len(raw) > expected:
        raise IdxTruncationError(
            f"image payload has {len(raw) - expected} trailing bytes beyond {expected}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def parse_idx_labels(raw: bytes) -> np.ndarray:
    """Decode an IDX label file into a (count,) uint8 array of digits 0-9."""
    if len(raw) < 4:
        raise IdxTruncationError(f"label file too short for a magic word ({len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != LABELS_MAGIC:
        raise IdxMagicError(f"label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")
    if len(raw) < 8:
        raise IdxTruncationError(f"label header needs 8 bytes, got {len(raw)}")
    count = struct.unpack(">II", raw[:8])[1]
    if len(raw) < 8 + count:
        raise IdxTruncationError(f"label payload has {len(raw)} bytes, expected {8 + count}")
    if len(raw) > 8 + count:
        raise IdxTruncationError(
            f"label payload has {len(raw) - 8 - count} trailing bytes beyond {8 + count}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if labels.size and labels.max() >= 10:
        raise IdxLabelError(f"label {int(labels.max())} out of range for 10-class data")
    return labels


def normalize(raw: np.ndarray) -> np.ndarray:
    """Map byte pixels 0..255 to float64 values in [0, 1] as value/255.0."""
    return np.asarray(raw, dtype=np.float64) / 255.0


@dataclass
class LabeledDataset:
    """Normalized images (N, 1, 28, 28) in [0, 1] with int labels (N,)."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"dataset: {len(self.images)} images but {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("dataset: pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices])


def split(dataset: LabeledDataset, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded disjoint 50,000/10,000 split of the 60,000-example train file."""
    if len(dataset) != TOTAL_TRAIN_FILE:
        raise ValueError(
            f"split: expected exactly {TOTAL_TRAIN_FILE} examples, got {len(dataset)}"
        )
    perm = np.random.default_rng(seed).permutation(TOTAL_TRAIN_FILE)
    return dataset.subset(perm[:TRAIN_SPLIT]), dataset.subset(perm[TRAIN_SPLIT:])


def batches(
    dataset: LabeledDataset,
    batch_size: int,
    seed: int | np.random.Generator,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of seeded-shuffled mini-batches; the final short batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batches: batch_size must be >= 1, got {batch_size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = perm[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


# ---------------------------------------------------------------------------
# file loading
# ---------------------------------------------------------------------------

def read_idx_bytes(path) -> bytes:
    """Read a file, transparently decompressing gzip (0x1f 0x8b prefix)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _find(data_dir, stem: str) -> Path:
    base = Path(data_dir)
    for candidate in (base / stem, base / f"{stem}.gz"):
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no {stem}[.gz] under {base}")


def load_dataset(images_path, labels_path) -> LabeledDataset:
    images = parse_idx_images(read_idx_bytes(images_path))
    labels = parse_idx_labels(read_idx_bytes(labels_path))
    if len(images) != len(labels):
        raise IdxFormatError(
            f"{images_path} holds {len(images)} images but {labels_path} holds "
            f"{len(labels)} labels"
        )
    return LabeledDataset(normalize(images)[:, None, :, :], labels.astype(np.int64))


def load_mnist_train(data_dir) -> LabeledDataset:
    """Load the 60,000-example MNIST training file from a directory."""
    return load_dataset(
        _find(data_dir, TRAIN_IMAGES_STEM), _find(data_dir, TRAIN_LABELS_STEM)
    )
