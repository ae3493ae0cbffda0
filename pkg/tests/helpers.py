"""Shared test utilities: FD oracles, synthetic data builders, IDX writers."""

from __future__ import annotations

import struct

import numpy as np

from advlab import autodiff as ad
from advlab.dataset import LabeledDataset


def finite_difference(f, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Dense central finite differences of scalar f() w.r.t. arr, in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(reference)), floor)
    return float((np.abs(analytic - reference) / denom).max())


def gradcheck(make_loss, tensors, h: float = 1e-6, floor: float = 1e-8) -> float:
    """Full-coordinate FD check; returns the worst relative error."""
    for t in tensors:
        t.zero_grad()
    ad.backward(make_loss())
    worst = 0.0
    for t in tensors:
        fd = finite_difference(lambda: make_loss().item(), t.data, h)
        worst = max(worst, max_rel_err(t.grad, fd, floor))
    return worst


def network_probe(net, images: np.ndarray, labels):
    """One eval-mode pass returning (mean NLL at T=1, activation pattern).

    The pattern (relu signs and pool argmax) identifies the piecewise-linear
    region the forward pass ran in; finite differences are a valid gradient
    oracle only when both probe points share it.
    """
    from advlab import _kernels

    p = dict(net.parameters())
    with ad.no_grad():
        h1 = ad.conv2d(ad.Tensor(images), p["conv1.weight"], p["conv1.bias"]).data
        r1 = np.maximum(h1, 0)
        h2 = ad.conv2d(ad.Tensor(r1), p["conv2.weight"], p["conv2.bias"]).data
        r2 = np.maximum(h2, 0)
        pool, arg = _kernels.maxpool_forward(r2, 2, True)
        h3 = pool.reshape(len(images), -1) @ p["fc1.weight"].data.T + p["fc1.bias"].data
        r3 = np.maximum(h3, 0)
        logits = r3 @ p["fc2.weight"].data.T + p["fc2.bias"].data
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    nll = float(-log_probs[np.arange(len(images)), labels].mean())
    return nll, (h1 > 0, h2 > 0, arg, h3 > 0)


def patterns_equal(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def network_nll(net, images: np.ndarray, labels) -> float:
    """Eval-mode mean NLL at temperature 1 without touching the trace."""
    with ad.no_grad():
        lp = net.forward(images, mode="eval", temperature=1.0)
    return float(-lp.data[np.arange(len(images)), labels].mean())


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def synthetic_dataset(count: int, seed: int = 0) -> LabeledDataset:
    """Learnable toy set: the label controls which image quadrant is bright."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, count)
    images = rng.uniform(0.0, 0.15, (count, 1, 28, 28))
    for i, lab in enumerate(labels):
        r, c = divmod(int(lab), 4)
        images[i, 0, 3 + 6 * r : 9 + 6 * r, 3 + 6 * c : 9 + 6 * c] += 0.8
    return LabeledDataset(np.clip(images, 0.0, 1.0), labels.astype(np.int64))


def write_idx_images(path, images: np.ndarray) -> None:
    count, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, count, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def golden_idx_images(count: int = 4, rows: int = 2, cols: int = 2) -> bytes:
    payload = bytes(i % 256 for i in range(count * rows * cols))
    return struct.pack(">IIII", 0x00000803, count, rows, cols) + payload


def golden_idx_labels(values=(0, 5, 9, 3)) -> bytes:
    return struct.pack(">II", 0x00000801, len(values)) + bytes(values)
