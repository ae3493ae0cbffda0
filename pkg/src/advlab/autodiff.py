"""Dense float64 tensors with reverse-mode differentiation.

The engine is intentionally small. A :class:`Tensor` wraps a numpy array;
every differentiable operation stores its input tensors and a backward
rule on the output tensor, forming a trace; :func:`backward` replays that
trace in reverse execution order and accumulates gradients. Only the
operations the CNN, the attacks, and the distillation pipeline need are
provided -- there is no broadcasting machinery beyond what those require.

All arithmetic is 64-bit. Gradients are propagated to an input only when
that input has ``requires_grad`` set, so evaluation passes and attacks
that freeze the model parameters skip the expensive weight-gradient
computations automatically.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import _kernels as _k

__all__ = [
    "Tensor",
    "no_grad",
    "add",
    "mul",
    "tsum",
    "relu",
    "flatten",
    "affine",
    "conv2d",
    "maxpool2d",
    "dropout",
    "log_softmax",
    "nll_loss",
    "soft_cross_entropy",
    "backward",
    "input_gradient",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable trace recording inside the block (evaluation fast path)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A dense n-dimensional float64 array with an optional gradient.

    ``grad`` is ``None`` until a backward pass deposits a gradient; once
    present it always has the same shape as ``data``. Repeated backward
    passes accumulate into ``grad`` until :meth:`zero_grad` resets it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flags})"


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, recording the backward rule when the trace is live."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / reduction primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    return _node(np.sum(a.data), (a,), lambda g: (np.full(a.shape, g),))


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the gradient at exactly 0 is 0."""
    out = np.maximum(a.data, 0.0)
    if not (_grad_enabled and a.requires_grad):
        return _node(out, (a,), None)
    mask = a.data > 0
    return _node(out, (a,), lambda g: (g * mask,))


def flatten(a: Tensor) -> Tensor:
    """Collapse all axes after the first into one."""
    n = a.shape[0]
    return _node(a.data.reshape(n, -1), (a,), lambda g: (g.reshape(a.shape),))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Dense layer: ``x @ weight.T + bias`` for x (B,N), weight (M,N), bias (M,)."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ValueError(
            f"affine: expected ranks (2,2,1), got {x.ndim},{weight.ndim},{bias.ndim}"
        )
    if x.shape[1] != weight.shape[1] or bias.shape[0] != weight.shape[0]:
        raise ValueError(
            f"affine: shape mismatch x{x.shape} weight{weight.shape} bias{bias.shape}"
        )

    def backward_fn(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _node(x.data @ weight.data.T + bias.data, (x, weight, bias), backward_fn)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation.

    x is (B, C, H, W), weight is (O, C, KH, KW), bias is (O,). The output
    spatial size is floor((H-KH)/stride)+1 per axis, and the layer is
    differentiable with respect to all three tensor arguments. Internally
    the kernel windows are flattened once (im2col) so the forward pass and
    the weight gradient are single matrix products, and the input gradient
    is a matrix product scattered back through col2im.
    """
    if x.ndim != 4 or weight.ndim != 4 or bias.ndim != 1:
        raise ValueError(
            f"conv2d: expected ranks (4,4,1), got {x.ndim},{weight.ndim},{bias.ndim}"
        )
    if stride < 1 or int(stride) != stride:
        raise ValueError(f"conv2d: stride must be a positive integer, got {stride}")
    batch, cin, height, width = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input has {cin} channels but weight expects {cin_w}")
    if bias.shape[0] != cout:
        raise ValueError(f"conv2d: bias {bias.shape} does not match {cout} output channels")
    if kh > height or kw > width:
        raise ValueError(
            f"conv2d: kernel ({kh}x{kw}) larger than input ({height}x{width})"
        )

    cols = _k.im2col(x.data, kh, kw, stride)  # (C*KH*KW, B*Ho*Wo)
    w2d = weight.data.reshape(cout, cin * kh * kw)
    out2d = w2d @ cols
    out2d += bias.data[:, None]
    ho = (height - kh) // stride + 1
    wo = (width - kw) // stride + 1
    out = out2d.reshape(cout, batch, ho, wo).transpose(1, 0, 2, 3)
    # the column matrix is retained only when the weight gradient needs it
    kept_cols = cols if (_grad_enabled and weight.requires_grad) else None

    def backward_fn(g):
        g2d = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        gw = (g2d @ kept_cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = w2d.T @ g2d
            gx = _k.col2im(dcols, kh, kw, stride, x.shape)
        return gx, gw, gb

    return _node(out, (x, weight, bias), backward_fn)


def maxpool2d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling; spatial dims must be divisible by window.

    The backward pass routes each cell's gradient to the first maximal
    element in row-major scan order of its window.
    """
    if x.ndim != 4:
        raise ValueError(f"maxpool2d: expected a 4-d tensor, got {x.ndim}-d")
    if window < 1 or int(window) != window:
        raise ValueError(f"maxpool2d: window must be a positive integer, got {window}")
    batch, ch, height, width = x.shape
    if height % window or width % window:
        raise ValueError(
            f"maxpool2d: spatial dims ({height}x{width}) not divisible by window {window}"
        )
    want_arg = _grad_enabled and x.requires_grad
    out, argmax = _k.maxpool_forward(x.data, window, want_arg)
    if not want_arg:
        return _node(out, (x,), None)

    def backward_fn(g):
        return (_k.maxpool_backward(g, argmax, window, x.shape),)

    return _node(out, (x,), backward_fn)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Channel-wise (2-D) dropout.

    In train mode each channel -- an entry of the first two axes, i.e. a
    whole feature map for convolutional activations or a single unit for
    dense activations -- is zeroed independently with probability ``p`` and
    survivors are scaled by 1/(1-p). Eval mode is the identity.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout: mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: train mode requires a seeded generator")
    mask_shape = x.shape[:2] + (1,) * (x.ndim - 2)
    scale = (rng.random(mask_shape) >= p) / (1.0 - p)
    return _node(x.data * scale, (x,), lambda g: (g * scale,))


# ---------------------------------------------------------------------------
# output head and losses
# ---------------------------------------------------------------------------

def log_softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise log of softmax(logits / T), stabilised by max subtraction."""
    if logits.ndim != 2:
        raise ValueError(f"log_softmax: expected a (B, C) tensor, got shape {logits.shape}")
    if not temperature > 0:
        raise ValueError(f"log_softmax: temperature must be positive, got {temperature}")
    scaled = logits.data / temperature
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def backward_fn(g):
        probs = np.exp(logp)
        return ((g - probs * g.sum(axis=1, keepdims=True)) / temperature,)

    return _node(logp, (logits,), backward_fn)


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.shape != (n_rows,):
        raise ValueError(f"labels: expected {n_rows} entries, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
        raise ValueError(f"labels: class indices must lie in [0, {n_classes})")
    return arr.astype(np.intp)


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true classes."""
    n, c = log_probs.shape
    idx = _check_labels(labels, n, c)
    picked = log_probs.data[np.arange(n), idx]

    def backward_fn(g):
        gl = np.zeros_like(log_probs.data)
        gl[np.arange(n), idx] = -float(g) / n
        return (gl,)

    return _node(-picked.mean(), (log_probs,), backward_fn)


def soft_cross_entropy(log_probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy against per-example probability vectors.

    Every target row must be non-negative and sum to 1 within 1e-6.
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != log_probs.shape:
        raise ValueError(
            f"soft_cross_entropy: targets {t.shape} do not match log-probs {log_probs.shape}"
        )
    if t.size and t.min() < 0.0:
        raise ValueError("soft_cross_entropy: target probabilities must be non-negative")
    sums = t.sum(axis=1)
    if t.size and np.abs(sums - 1.0).max() > 1e-6:
        bad = int(np.abs(sums - 1.0).argmax())
        raise ValueError(
            f"soft_cross_entropy: target row {bad} sums to {sums[bad]!r}, expected 1"
        )
    n = log_probs.shape[0]

    def backward_fn(g):
        return (t * (-float(g) / n),)

    return _node(-(t * log_probs.data).sum(axis=1).mean(), (log_probs,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    The loss must be a scalar; its own gradient is seeded with 1.0. Calling
    backward again without resetting gradients accumulates a second full
    contribution.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")

    # post-order over the recorded trace, iterative to spare the recursion limit
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    pass_grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = pass_grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad or node is loss:
            # closures hand over ownership of their contributions, so the
            # pass gradient can be stored directly; accumulation reallocates
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, contrib in zip(node._parents, node._backward(g)):
            if contrib is None or not parent.requires_grad:
                continue
            held = pass_grads.get(id(parent))
            pass_grads[id(parent)] = contrib if held is None else held + contrib


def input_gradient(net, image: Tensor, label, temperature: float) -> Tensor:
    """Gradient of the eval-mode NLL loss with respect to the input pixels.

    ``image`` must be a (B, 1, 28, 28) tensor marked requires_grad; ``label``
    is a class index or a length-B sequence of them. Model parameters are
    left untouched: their requires_grad flags are cleared for the duration
    of the pass, so no parameter gradients are computed or written.
    """
    if not isinstance(image, Tensor) or not image.requires_grad:
        raise ValueError("input_gradient: image must be a Tensor with requires_grad set")
    if image.ndim != 4:
        raise ValueError(f"input_gradient: expected a 4-d image batch, got {image.ndim}-d")
    labels = [int(label)] * image.shape[0] if np.ndim(label) == 0 else label
    params = [p for _, p in net.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    image.zero_grad()
    try:
        log_probs = net.forward(image, mode="eval", temperature=temperature)
        backward(nll_loss(log_probs, labels))
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag
    return Tensor(image.grad.copy())
