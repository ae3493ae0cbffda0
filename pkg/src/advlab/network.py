"""The MNIST CNN and its bit-exact checkpoint format.

Architecture (fixed, not configurable):

    conv 1->32 3x3 s1 + relu
    conv 32->64 3x3 s1 + relu
    maxpool 2x2
    dropout 0.25 (channel-wise)
    flatten (64 * 12 * 12 = 9216)
    affine 9216->128 + relu
    dropout 0.5 (channel-wise)
    affine 128->10
    log-softmax at the network temperature

Checkpoint layout, little-endian throughout: magic ``ADVL``, u32 format
version, u32 length + UTF-8 architecture id, f64 temperature, then per
parameter: u32 length + UTF-8 name, u32 rank, rank * u32 dims, raw f64
values in row-major order. No trailing data is allowed.
"""

from __future__ import annotations

import os
import struct
from typing import Iterator

import numpy as np

from .autodiff import (
    Tensor,
    affine,
    conv2d,
    dropout,
    flatten,
    log_softmax,
    maxpool2d,
    no_grad,
    relu,
)

__all__ = [
    "ARCH_ID",
    "FORMAT_VERSION",
    "Network",
    "build",
    "save",
    "load",
    "predict_log_probs",
    "CheckpointError",
    "BadMagic",
    "VersionMismatch",
    "ArchitectureMismatch",
    "TruncatedCheckpoint",
    "NonFiniteParameter",
    "write_container",
    "read_container",
]

MAGIC = b"ADVL"
FORMAT_VERSION = 1
ARCH_ID = "mnist-cnn-32c3-64c3-p2-128d-10"

IMAGE_SHAPE = (1, 28, 28)
FLAT_FEATURES = 64 * 12 * 12  # forced by two valid 3x3 convs and one 2x2 pool

_LAYOUT = (
    ("conv1.weight", (32, 1, 3, 3), 1 * 3 * 3),
    ("conv1.bias", (32,), 1 * 3 * 3),
    ("conv2.weight", (64, 32, 3, 3), 32 * 3 * 3),
    ("conv2.bias", (64,), 32 * 3 * 3),
    ("fc1.weight", (128, FLAT_FEATURES), FLAT_FEATURES),
    ("fc1.bias", (128,), FLAT_FEATURES),
    ("fc2.weight", (10, 128), 128),
    ("fc2.bias", (10,), 128),
)


class CheckpointError(Exception):
    """Base class for checkpoint I/O failures."""


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ArchitectureMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class NonFiniteParameter(CheckpointError):
    pass


class Network:
    """The fixed CNN; owns its parameters, mode, and output temperature."""

    def __init__(self, params: dict[str, Tensor], temperature: float = 1.0):
        missing = [name for name, _, _ in _LAYOUT if name not in params]
        if missing:
            raise ValueError(f"Network: missing parameters {missing}")
        for name, shape, _ in _LAYOUT:
            if params[name].shape != shape:
                raise ValueError(
                    f"Network: parameter {name} has shape {params[name].shape}, expected {shape}"
                )
        if not temperature > 0:
            raise ValueError(f"Network: temperature must be positive, got {temperature}")
        self._params = {name: params[name] for name, _, _ in _LAYOUT}
        self.temperature = float(temperature)
        self.mode = "eval"

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    def forward(
        self,
        batch,
        rng: np.random.Generator | None = None,
        *,
        mode: str | None = None,
        temperature: float | None = None,
    ) -> Tensor:
        """Log-probabilities for a (B, 1, 28, 28) batch of pixels in [0, 1].

        Dropout is active only in train mode, which requires ``rng``.
        """
        mode = self.mode if mode is None else mode
        temp = self.temperature if temperature is None else temperature
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.ndim != 4 or x.shape[1:] != IMAGE_SHAPE:
            raise ValueError(
                f"forward: expected a (B, 1, 28, 28) batch, got shape {x.shape}"
            )
        p = self._params
        h = relu(conv2d(x, p["conv1.weight"], p["conv1.bias"]))
        h = relu(conv2d(h, p["conv2.weight"], p["conv2.bias"]))
        h = maxpool2d(h, 2)
        h = dropout(h, 0.25, mode, rng)
        h = flatten(h)
        h = relu(affine(h, p["fc1.weight"], p["fc1.bias"]))
        h = dropout(h, 0.5, mode, rng)
        h = affine(h, p["fc2.weight"], p["fc2.bias"])
        return log_softmax(h, temp)


def build(seed: int, temperature: float = 1.0) -> Network:
    """Fresh network, each layer initialised uniformly in +-sqrt(1/fan_in)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in in _LAYOUT:
        bound = float(np.sqrt(1.0 / fan_in))
        params[name] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
    return Network(params, temperature=temperature)


def predict_log_probs(
    net: Network,
    images: np.ndarray,
    temperature: float = 1.0,
    chunk: int = 512,
) -> np.ndarray:
    """Eval-mode log-probabilities for many images, computed chunk-wise."""
    outputs = []
    with no_grad():
        for start in range(0, len(images), chunk):
            part = net.forward(images[start : start + chunk], mode="eval", temperature=temperature)
            outputs.append(part.data)
    return np.concatenate(outputs, axis=0)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def write_container(
    path, arch_id: str, temperature: float, arrays: list[tuple[str, np.ndarray]]
) -> None:
    """Serialise named float64 arrays in the checkpoint layout, atomically."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    encoded = arch_id.encode("utf-8")
    blob += struct.pack("<I", len(encoded)) + encoded
    blob += struct.pack("<d", temperature)
    for name, arr in arrays:
        arr = np.asarray(arr, dtype=np.float64)
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb)) + nb
        blob += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += np.ascontiguousarray(arr).astype("<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedCheckpoint(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        piece = self.blob[self.pos : self.pos + n]
        self.pos += n
        return piece

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def exhausted(self) -> bool:
        return self.pos == len(self.blob)


def read_container(path) -> tuple[str, float, list[tuple[str, np.ndarray]]]:
    """Parse a checkpoint container, validating structure and finiteness."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())
    if cur.take(4) != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file (bad magic bytes)")
    version = cur.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    arch_id = cur.take(cur.u32()).decode("utf-8")
    temperature = cur.f64()
    if not np.isfinite(temperature):
        raise NonFiniteParameter(f"{path}: non-finite temperature")
    arrays: list[tuple[str, np.ndarray]] = []
    while not cur.exhausted():
        name = cur.take(cur.u32()).decode("utf-8")
        rank = cur.u32()
        shape = tuple(cur.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(cur.take(8 * count), dtype="<f8").reshape(shape)
        if not np.isfinite(values).all():
            raise NonFiniteParameter(f"{path}: parameter {name!r} contains non-finite values")
        arrays.append((name, values.astype(np.float64)))
    return arch_id, temperature, arrays


def save(net: Network, path) -> None:
    """Write the network to ``path`` in the checkpoint format."""
    write_container(
        path, ARCH_ID, net.temperature, [(n, p.data) for n, p in net.parameters()]
    )


def load(path) -> Network:
    """Read a checkpoint; rejects any container that is not this architecture."""
    arch_id, temperature, arrays = read_container(path)
    if arch_id != ARCH_ID:
        raise ArchitectureMismatch(f"{path}: architecture {arch_id!r}, expected {ARCH_ID!r}")
    named = dict(arrays)
    expected = [name for name, _, _ in _LAYOUT]
    if list(named) != expected:
        raise ArchitectureMismatch(
            f"{path}: parameter set {sorted(named)} does not match the architecture"
        )
    for name, shape, _ in _LAYOUT:
        if named[name].shape != shape:
            raise ArchitectureMismatch(
                f"{path}: parameter {name} has shape {named[name].shape}, expected {shape}"
            )
    if not temperature > 0:
        raise ArchitectureMismatch(f"{path}: non-positive training temperature {temperature}")
    params = {name: Tensor(named[name], requires_grad=True) for name in named}
    return Network(params, temperature=temperature)
