"""Reverse-mode differentiation over dense float64 arrays.

A deliberately closed operator set sized for the 1-D residual classifier:
conv1d, batch_norm1d, relu, avg_pool1d, affine, add, reshape, and
softmax_cross_entropy. Operations executed inside a ``with Tape():`` block
are recorded in execution order; ``backward`` replays the tape in exact
reverse, accumulating gradients into every tensor that requires them.

All math is float64. Convolution uses cross-correlation semantics (no
kernel flip), matching the convention of mainstream deep-learning stacks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBatch,
    DetachedLoss,
    InvalidTarget,
    ShapeMismatch,
)


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: "_Node | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: object  # grad_out -> tuple of per-input grads (or None)


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Execution-ordered record of operations for one forward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._nodes)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._node is not None


def _record(output: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(_tracked(t) for t in inputs):
        node = _Node(inputs=inputs, output=output, backward_fn=backward_fn)
        tape._nodes.append(node)
        output._node = node
    return output


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every tensor requiring it.

    The tape is traversed in exact reverse execution order, so every
    consumer's contribution lands before its producer runs.
    """
    if loss.data.size != 1:
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
    node = loss._node
    if node is None or all(n is not node for n in tape._nodes):
        raise DetachedLoss("loss was not produced through this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {}
    for n in reversed(tape._nodes):
        gout = grads.pop(id(n.output), None)
        if gout is None:
            continue
        for t, g in zip(n.inputs, n.backward_fn(gout)):
            if g is None:
                continue
            key = id(t)
            tensors[key] = t
            held = grads.get(key)
            grads[key] = g if held is None else held + g
    for key, g in grads.items():
        t = tensors.get(key)
        if t is not None and t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g


# --- operators ----------------------------------------------------------------

def conv1d(
    x: Tensor,
    w: Tensor,
    b: Tensor,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Batched 1-D cross-correlation with zero padding.

    out[n, o, i] = b[o] + sum_{c,j} w[o, c, j] * x[n, c, i*stride +
    j*dilation - padding], with out-of-range taps reading zero.
    """
    if x.data.ndim != 3 or w.data.ndim != 3 or b.data.ndim != 1:
        raise ShapeMismatch("conv1d expects x (N,C,L), w (O,C,k), b (O,)")
    n, c_in, length = x.data.shape
    c_out, c_w, k = w.data.shape
    if c_w != c_in or b.data.shape[0] != c_out:
        raise ShapeMismatch(
            f"conv1d channel mismatch: x has {c_in}, w ({c_out},{c_w},{k}), "
            f"b {b.data.shape}")
    if k % 2 != 1:
        raise ShapeMismatch(f"kernel size must be odd, got {k}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeMismatch("stride/dilation must be >=1 and padding >=0")
    span = dilation * (k - 1) + 1
    if length + 2 * padding < span:
        raise ShapeMismatch(
            f"input length {length} with padding {padding} is shorter than "
            f"the dilated kernel span {span}")
    l_out = (length + 2 * padding - span) // stride + 1

    padded_len = length + 2 * padding
    if padding:
        xp = np.zeros((n, c_in, padded_len))
        xp[:, :, padding:padding + length] = x.data
    else:
        xp = np.ascontiguousarray(x.data)
    # zero-copy sliding view: cols[n, c, i, j] = xp[n, c, i*stride + j*dilation]
    sn, sc, sl = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, (n, c_in, l_out, k), (sn, sc, stride * sl, dilation * sl))
    out_data = np.tensordot(cols, w.data, axes=([1, 3], [1, 2]))  # (N, L_out, O)
    out = Tensor(np.ascontiguousarray((out_data + b.data).transpose(0, 2, 1)))

    def backward_fn(g):
        gx = gw = gb = None
        if _tracked(b):
            gb = g.sum(axis=(0, 2))
        if _tracked(w):
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))   # (O, C, k)
        if _tracked(x):
            gall = np.tensordot(g, w.data, axes=([1], [0]))     # (N, L_out, C, k)
            gxp = np.zeros((n, c_in, padded_len))
            for j in range(k):
                stop = j * dilation + stride * (l_out - 1) + 1
                gxp[:, :, j * dilation:stop:stride] += gall[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, padding:padding + length] if padding else gxp
        return gx, gw, gb

    return _record(out, (x, w, b), backward_fn)


@dataclass
class BnState:
    """Running statistics of one batch-norm layer (eval-mode normalizers)."""

    mean: np.ndarray
    var: np.ndarray

    def copy(self) -> "BnState":
        return BnState(self.mean.copy(), self.var.copy())


def batch_norm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BnState,
    mode: Mode,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalization over the batch and length axes.

    Train mode normalizes by the batch mean and biased variance and blends
    the running statistics as (1-momentum)*old + momentum*batch, with the
    unbiased variance stored; eval mode normalizes by the running values.
    """
    if x.data.ndim != 3:
        raise ShapeMismatch(f"batch_norm1d expects (N, C, L), got {x.shape}")
    n, c, length = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch("gamma/beta must be shape (C,)")
    if state.mean.shape != (c,) or state.var.shape != (c,):
        raise ShapeMismatch("running stats must be shape (C,)")

    if mode is Mode.TRAIN:
        m = n * length
        if m < 2:
            raise DegenerateBatch("train-mode batch norm needs N*L >= 2")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))  # biased
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
        state.mean[:] = (1.0 - momentum) * state.mean + momentum * mu
        state.var[:] = (1.0 - momentum) * state.var + momentum * var * m / (m - 1)

        out = Tensor(gamma.data[None, :, None] * xhat + beta.data[None, :, None])

        def backward_train(g):
            ggamma = gbeta = gx = None
            if _tracked(beta):
                gbeta = g.sum(axis=(0, 2))
            if _tracked(gamma):
                ggamma = (g * xhat).sum(axis=(0, 2))
            if _tracked(x):
                gsum = g.sum(axis=(0, 2))[None, :, None]
                gx_sum = (g * xhat).sum(axis=(0, 2))[None, :, None]
                gx = (gamma.data[None, :, None] * inv[None, :, None] / m) * (
                    m * g - gsum - xhat * gx_sum)
            return gx, ggamma, gbeta

        return _record(out, (x, gamma, beta), backward_train)

    inv = 1.0 / np.sqrt(state.var + eps)
    xhat = (x.data - state.mean[None, :, None]) * inv[None, :, None]
    out = Tensor(gamma.data[None, :, None] * xhat + beta.data[None, :, None])

    def backward_eval(g):
        ggamma = gbeta = gx = None
        if _tracked(beta):
            gbeta = g.sum(axis=(0, 2))
        if _tracked(gamma):
            ggamma = (g * xhat).sum(axis=(0, 2))
        if _tracked(x):
            gx = g * (gamma.data * inv)[None, :, None]
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), backward_eval)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))

    def backward_fn(g):
        return (g * mask,)

    return _record(out, (x,), backward_fn)


def avg_pool1d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Mean over each kernel-long slice starting every stride (no padding)."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"avg_pool1d expects (N, C, L), got {x.shape}")
    n, c, length = x.data.shape
    if kernel < 1 or kernel > length:
        raise ShapeMismatch(f"kernel {kernel} must be in [1, {length}]")
    if stride < 1:
        raise ShapeMismatch("stride must be >= 1")
    l_out = (length - kernel) // stride + 1
    xc = np.ascontiguousarray(x.data)
    sn, sc, sl = xc.strides
    sliding = np.lib.stride_tricks.as_strided(
        xc, (n, c, l_out, kernel), (sn, sc, stride * sl, sl))
    out = Tensor(sliding.mean(axis=3))

    def backward_fn(g):
        if not _tracked(x):
            return (None,)
        share = g / kernel
        gx = np.zeros((n, c, length))
        for j in range(kernel):
            gx[:, :, j:j + stride * (l_out - 1) + 1:stride] += share
        return (gx,)

    return _record(out, (x,), backward_fn)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """out = x @ w.T + b for x (N, F), w (O, F), b (O,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeMismatch("affine expects x (N,F), w (O,F), b (O,)")
    if x.data.shape[1] != w.data.shape[1] or w.data.shape[0] != b.data.shape[0]:
        raise ShapeMismatch(
            f"affine shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    out = Tensor(x.data @ w.data.T + b.data)

    def backward_fn(g):
        gx = g @ w.data if _tracked(x) else None
        gw = g.T @ x.data if _tracked(w) else None
        gb = g.sum(axis=0) if _tracked(b) else None
        return gx, gw, gb

    return _record(out, (x, w, b), backward_fn)


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (residual joins)."""
    if x.data.shape != y.data.shape:
        raise ShapeMismatch(f"add needs equal shapes, got {x.shape} vs {y.shape}")
    out = Tensor(x.data + y.data)

    def backward_fn(g):
        return (g if _tracked(x) else None, g if _tracked(y) else None)

    return _record(out, (x, y), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}")
    out = Tensor(x.data.reshape(shape))

    def backward_fn(g):
        return (g.reshape(x.data.shape) if _tracked(x) else None,)

    return _record(out, (x,), backward_fn)


def softmax_cross_entropy(
    logits: Tensor, targets: np.ndarray
) -> tuple[Tensor, Tensor]:
    """Mean negative log-likelihood plus the (detached) row softmax.

    Logits are max-shifted before exponentiation; the gradient w.r.t. the
    logits is (probs - onehot) / N.
    """
    if logits.data.ndim != 2:
        raise ShapeMismatch(f"logits must be (N, C), got {logits.shape}")
    n, c = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeMismatch(f"targets must be shape ({n},), got {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise InvalidTarget(f"targets must lie in [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    denom = expz.sum(axis=1, keepdims=True)
    probs = expz / denom
    logp = shifted - np.log(denom)
    loss = Tensor(-logp[np.arange(n), targets].mean())

    def backward_fn(g):
        if not _tracked(logits):
            return (None,)
        grad = probs.copy()
        grad[np.arange(n), targets] -= 1.0
        return (grad * (float(g) / n),)

    _record(loss, (logits,), backward_fn)
    return loss, Tensor(probs)
