"""FGSM perturbation and sweep; universal adversarial patch attack.

FGSM builds ``adv = clamp(x + eps * sign(grad_x loss), 0, 1)`` with the
convention sign(0) = 0, attacking and classifying at temperature 1 (the
deployment temperature) regardless of the temperature a model was trained
at. The patch attack optimises a small pixel block, pasted at a uniformly
random position per example, to maximise the mean log-probability of a
chosen target class while the model is held frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, input_gradient, nll_loss, no_grad
from .dataset import LabeledDataset
from .evaluation import EvalReport
from .network import Network, read_container, write_container, ArchitectureMismatch
from .training import AdamState, adam_step

__all__ = [
    "DEFAULT_EPSILONS",
    "AttackConfig",
    "PatchSpec",
    "fgsm",
    "fgsm_sweep",
    "patch_train",
    "patch_apply",
    "patch_evaluate",
    "save_patch",
    "load_patch",
    "PATCH_ARCH_ID",
    "PATCH_LR",
    "PATCH_EPOCHS",
    "PATCH_BATCH",
]

DEFAULT_EPSILONS = (0.000, 0.007, 0.010, 0.020, 0.030, 0.050, 0.100, 0.200, 0.300)

PATCH_ARCH_ID = "PATCH"
PATCH_LR = 0.01
PATCH_EPOCHS = 5
PATCH_BATCH = 256


@dataclass(frozen=True)
class AttackConfig:
    """Ascending grid of FGSM noise intensities on the normalized [0,1] scale."""

    epsilons: tuple[float, ...] = DEFAULT_EPSILONS

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValueError("AttackConfig: epsilon grid must be non-empty")
        if any(e < 0.0 or e > 1.0 for e in eps):
            raise ValueError(f"AttackConfig: epsilons must lie in [0, 1], got {eps}")
        if any(a > b for a, b in zip(eps, eps[1:])):
            raise ValueError(f"AttackConfig: epsilon grid must be sorted ascending, got {eps}")
        object.__setattr__(self, "epsilons", eps)


@dataclass
class PatchSpec:
    """A trained square patch: pixels in [0, 1] plus its size and target class."""

    pixels: np.ndarray
    size: int
    target_class: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (self.size, self.size):
            raise ValueError(
                f"PatchSpec: pixels {self.pixels.shape} do not match size {self.size}"
            )
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("PatchSpec: pixels must lie in [0, 1]")
        if not 0 <= self.target_class < 10:
            raise ValueError(f"PatchSpec: target class {self.target_class} out of range")


# ---------------------------------------------------------------------------
# FGSM
# ---------------------------------------------------------------------------

def _batch_input_gradient(net: Network, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-image loss gradients for a whole batch at temperature 1.

    The mean-NLL gradient is scaled back up by the batch size, undoing the
    1/B reduction so each image sees its own one-image gradient (exactly so
    for power-of-two batch sizes, where the scaling is lossless).
    """
    batch = Tensor(images, requires_grad=True)
    grad = input_gradient(net, batch, labels, 1.0).data
    return grad * float(len(images))


def perturb(image: np.ndarray, gradient: np.ndarray, epsilon: float) -> np.ndarray:
    """The sign-gradient step: clamp(image + epsilon * sign(gradient), 0, 1)."""
    if epsilon < 0:
        raise ValueError(f"fgsm: epsilon must be non-negative, got {epsilon}")
    return np.clip(image + epsilon * np.sign(gradient), 0.0, 1.0)


def fgsm(net: Network, image: np.ndarray, label: int, epsilon: float) -> np.ndarray:
    """Single-step sign-gradient perturbation of one (1, 28, 28) image."""
    if epsilon < 0:
        raise ValueError(f"fgsm: epsilon must be non-negative, got {epsilon}")
    img = np.asarray(image, dtype=np.float64)
    grad = input_gradient(net, Tensor(img[None], requires_grad=True), int(label), 1.0)
    return perturb(img, grad.data[0], epsilon)


def fgsm_sweep(
    net: Network,
    dataset: LabeledDataset,
    config: AttackConfig = AttackConfig(),
    chunk: int = 256,
) -> EvalReport:
    """Accuracy under FGSM for every epsilon in the grid.

    The input gradient is computed once per image (it does not depend on
    epsilon) and every grid point reuses its sign. Gradients are taken
    against the per-image loss (sum reduction over the chunk, so batching
    does not rescale any image's gradient) and classification happens at
    temperature 1.
    """
    previous_mode = net.mode
    net.eval()
    correct = np.zeros(len(config.epsilons), dtype=np.int64)
    try:
        for start in range(0, len(dataset), chunk):
            images = dataset.images[start : start + chunk]
            labels = dataset.labels[start : start + chunk]
            signs = np.sign(_batch_input_gradient(net, images, labels))
            for i, eps in enumerate(config.epsilons):
                adv = perturb(images, signs, eps)
                with no_grad():
                    log_probs = net.forward(adv, mode="eval", temperature=1.0)
                correct[i] += int((log_probs.data.argmax(axis=1) == labels).sum())
    finally:
        net.mode = previous_mode
    report = EvalReport(metadata={"attack": "fgsm", "setting": "epsilon"})
    for eps, hits in zip(config.epsilons, correct):
        report.add(eps, int(hits), len(dataset))
    return report


# ---------------------------------------------------------------------------
# adversarial patch
# ---------------------------------------------------------------------------

def _paste_batch(patch: Tensor, images: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Overwrite a per-example region with the patch, differentiably in the patch."""
    from .autodiff import _node

    size = patch.shape[0]
    data = images.copy()
    for b in range(len(images)):
        data[b, 0, rows[b] : rows[b] + size, cols[b] : cols[b] + size] = patch.data

    def backward_fn(g):
        gp = np.zeros_like(patch.data)
        for b in range(len(images)):
            gp += g[b, 0, rows[b] : rows[b] + size, cols[b] : cols[b] + size]
        return (gp,)

    return _node(data, (patch,), backward_fn)


def patch_train(
    net: Network,
    train_set: LabeledDataset,
    size: int,
    target_class: int,
    iters: int,
    seed: int,
    batch_size: int = PATCH_BATCH,
    lr: float = PATCH_LR,
) -> PatchSpec:
    """Optimise patch pixels by gradient ascent on the target log-probability.

    ``iters`` counts optimizer steps over shuffled mini-batches (an epoch is
    ceil(N / batch_size) steps). Placement is uniformly random per example,
    the model parameters stay frozen, and the pixels are clamped to [0, 1]
    after every step. The patch starts as seeded uniform noise in [0, 1].
    """
    side = train_set.images.shape[2]
    if not 0 < size < side:
        raise ValueError(f"patch_train: size {size} must lie in (0, {side})")
    if not 0 <= target_class < 10:
        raise ValueError(f"patch_train: target class {target_class} out of range")
    rng = np.random.default_rng(seed)
    patch = Tensor(rng.uniform(0.0, 1.0, (size, size)), requires_grad=True)
    params = [p for _, p in net.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    previous_mode = net.mode
    net.eval()
    adam = AdamState(lr=lr)
    count = len(train_set)
    order = rng.permutation(count)
    cursor = 0
    try:
        for _ in range(iters):
            if cursor >= count:
                order = rng.permutation(count)
                cursor = 0
            idx = order[cursor : cursor + batch_size]
            cursor += batch_size
            images = train_set.images[idx]
            rows = rng.integers(0, side - size + 1, len(idx))
            cols = rng.integers(0, side - size + 1, len(idx))
            patched = _paste_batch(patch, images, rows, cols)
            log_probs = net.forward(patched, mode="eval", temperature=1.0)
            # minimising NLL of the target class == ascending its mean log-prob
            loss = nll_loss(log_probs, np.full(len(idx), target_class))
            patch.zero_grad()
            backward(loss)
            adam_step(adam, [("patch", patch)])
            np.clip(patch.data, 0.0, 1.0, out=patch.data)
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag
        net.mode = previous_mode
    return PatchSpec(patch.data.copy(), size, target_class)


def patch_apply(image: np.ndarray, patch: PatchSpec, position: tuple[int, int]) -> np.ndarray:
    """Paste the patch at (row, col); everything outside the region is untouched."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError(f"patch_apply: expected one (H, W) or (C, H, W) image, got {img.ndim}-d")
    height, width = img.shape[-2:]
    row, col = position
    if row < 0 or col < 0 or row + patch.size > height or col + patch.size > width:
        raise ValueError(
            f"patch_apply: a {patch.size}x{patch.size} patch at ({row}, {col}) "
            f"does not fit a {height}x{width} image"
        )
    out = img.copy()
    out[..., row : row + patch.size, col : col + patch.size] = patch.pixels
    return out


def patch_evaluate(
    net: Network,
    test_set: LabeledDataset,
    patch: PatchSpec,
    seed: int,
    ks: tuple[int, ...] = (1, 5),
    chunk: int = 512,
) -> EvalReport:
    """Targeted success rates of the patch over non-target-class test images.

    Each image gets its own placement generator seeded with ``seed XOR index``
    so results do not depend on evaluation order. One report row per k: the
    fraction of images whose top-k prediction set contains the target class
    (ties ranked lower-class-index first).
    """
    target = patch.target_class
    selected = np.nonzero(test_set.labels != target)[0]
    side = test_set.images.shape[2]
    span = side - patch.size + 1
    rows = np.empty(len(selected), dtype=np.int64)
    cols = np.empty(len(selected), dtype=np.int64)
    for j, index in enumerate(selected):
        placement = np.random.default_rng(int(seed) ^ int(index))
        rows[j] = placement.integers(0, span)
        cols[j] = placement.integers(0, span)

    hits = {k: 0 for k in ks}
    for start in range(0, len(selected), chunk):
        idx = selected[start : start + chunk]
        images = test_set.images[idx].copy()
        for j, _ in enumerate(idx):
            r, c = rows[start + j], cols[start + j]
            images[j, 0, r : r + patch.size, c : c + patch.size] = patch.pixels
        with no_grad():
            log_probs = net.forward(images, mode="eval", temperature=1.0).data
        target_col = log_probs[:, target : target + 1]
        better = (log_probs > target_col).sum(axis=1)
        tied_lower = ((log_probs == target_col) & (np.arange(10) < target)).sum(axis=1)
        rank = better + tied_lower
        for k in ks:
            hits[k] += int((rank < k).sum())

    report = EvalReport(
        metadata={
            "attack": "patch",
            "setting": "top-k",
            "patch_size": str(patch.size),
            "target_class": str(target),
            "seed": str(seed),
        }
    )
    for k in ks:
        report.add(float(k), hits[k], len(selected))
    return report


def save_patch(patch: PatchSpec, path) -> None:
    """Store a patch in the checkpoint container under the PATCH architecture id."""
    write_container(
        path,
        PATCH_ARCH_ID,
        1.0,
        [("pixels", patch.pixels), ("target_class", np.float64(patch.target_class))],
    )


def load_patch(path) -> PatchSpec:
    arch_id, _, arrays = read_container(path)
    if arch_id != PATCH_ARCH_ID:
        raise ArchitectureMismatch(f"{path}: architecture {arch_id!r}, expected {PATCH_ARCH_ID!r}")
    named = dict(arrays)
    if set(named) != {"pixels", "target_class"}:
        raise ArchitectureMismatch(f"{path}: unexpected patch payload {sorted(named)}")
    pixels = named["pixels"]
    return PatchSpec(pixels, pixels.shape[0], int(named["target_class"]))
