"""Minimal dense-tensor reverse-mode differentiation, Adam, and grad checking.

Every operation records its inputs and a backward closure on the implicit
tape (the operand graph); backward() walks it in reverse topological order
and accumulates exact gradients additively.  Values are 64-bit floats
throughout and every op output is checked for finiteness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit

from .errors import NumericError, UsageError


class Tensor:
    """A float64 array with a gradient slot and optional tape history."""

    __slots__ = ("value", "grad", "trainable", "name", "_parents", "_backward")

    def __init__(
        self,
        value,
        trainable: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            # copy: grad may alias a buffer the caller keeps mutating
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.value.shape}, trainable={self.trainable})"


def constant(value, name: str | None = None) -> Tensor:
    return Tensor(value, trainable=False, name=name)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, trainable=True, name=name)


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    # sum() is one cheap pass; NaN/Inf anywhere poisons it
    if not np.isfinite(arr.sum()):
        raise NumericError(f"non-finite result in op {op!r}")
    return arr


def _make(value: np.ndarray, op: str, parents: tuple[Tensor, ...], backward) -> Tensor:
    return Tensor(_finite(value, op), _parents=parents, _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum *grad* down to *shape*, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value @ b.value

    def backward(g: np.ndarray) -> None:
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    return _make(out, "matmul", (a, b), backward)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing the transpose on the tape."""
    out = a.value @ b.value.T

    def backward(g: np.ndarray) -> None:
        a.accumulate(g @ b.value)
        b.accumulate(g.T @ a.value)

    return _make(out, "matmul_nt", (a, b), backward)


def spmm(mat, x: Tensor, mat_t=None) -> Tensor:
    """Constant (sparse or dense) matrix times a tensor: mat @ x.

    *mat* is not differentiated; pass a precomputed transpose to avoid
    recomputing it on every backward pass.
    """
    out = mat @ x.value
    if mat_t is None:
        mat_t = mat.T.tocsr() if sparse.issparse(mat) else mat.T

    def backward(g: np.ndarray) -> None:
        x.accumulate(mat_t @ g)

    return _make(out, "spmm", (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.value + b.value

    def backward(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(g, b.value.shape))

    return _make(out, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value * b.value

    def backward(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g * b.value, a.value.shape))
        b.accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _make(out, "mul", (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    out = x.value * c

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * c)

    return _make(out, "scale", (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b with b broadcast over rows."""
    out = x.value @ w.value.T + b.value

    def backward(g: np.ndarray) -> None:
        x.accumulate(g @ w.value)
        w.accumulate(g.T @ x.value)
        b.accumulate(_unbroadcast(g, b.value.shape))

    return _make(out, "linear", (x, w, b), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise UsageError("concat of an empty sequence")
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = (slice(None),) * axis + (slice(lo, hi),)
            t.accumulate(g[idx])

    return _make(out, "concat", tuple(tensors), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.value[:, start:stop]

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.value)
        gx[:, start:stop] = g
        x.accumulate(gx)

    return _make(out, "slice_cols", (x,), backward)


def gather_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    out = x.value[idx]

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx, g)
        x.accumulate(gx)

    return _make(out, "gather_rows", (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.value, 0.0)
    mask = x.value > 0.0

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return _make(out, "relu", (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.value)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * out * (1.0 - out))

    return _make(out, "sigmoid", (x,), backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.value <= 0):
        raise NumericError("log of a non-positive value")
    out = np.log(x.value)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g / x.value)

    return _make(out, "log", (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.value, lo, hi)
    mask = (x.value >= lo) & (x.value <= hi)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return _make(out, "clamp", (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        inner = (g * out).sum(axis=1, keepdims=True)
        x.accumulate((g - inner) * out)

    return _make(out, "softmax_rows", (x,), backward)


LAYER_NORM_EPS = 1e-8


def layer_norm_rows(x: Tensor) -> Tensor:
    """Normalize each row to zero mean and unit variance (no affine part)."""
    mu = x.value.mean(axis=1, keepdims=True)
    var = x.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.value - mu) * inv

    def backward(g: np.ndarray) -> None:
        gm = g.mean(axis=1, keepdims=True)
        gx = (g * xhat).mean(axis=1, keepdims=True)
        x.accumulate((g - gm - xhat * gx) * inv)

    return _make(xhat, "layer_norm_rows", (x,), backward)


def mean_rows(x: Tensor) -> Tensor:
    """Column means: (n, d) -> (1, d)."""
    n = x.value.shape[0]
    out = x.value.mean(axis=0, keepdims=True)

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.repeat(g, n, axis=0) / n)

    return _make(out, "mean_rows", (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    size = x.value.size
    out = np.asarray(x.value.mean())

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.full_like(x.value, float(g) / size))

    return _make(out, "mean_all", (x,), backward)


def dropout(x: Tensor, p: float, train: bool, seed) -> Tensor:
    """Inverted dropout: identity in eval mode, seeded Bernoulli mask in train."""
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        out = x.value.copy()

        def backward_id(g: np.ndarray) -> None:
            x.accumulate(g)

        return _make(out, "dropout", (x,), backward_id)
    rng = np.random.default_rng(seed)
    keep = (rng.random(x.value.shape) >= p) / (1.0 - p)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * keep)

    return _make(x.value * keep, "dropout", (x,), backward)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(leaf) into every tensor reachable from *out*.

    *out* must be a scalar (size-1) tensor.  Gradients add up across multiple
    uses of the same tensor; call zero_grad between optimization steps.
    """
    if out.value.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {out.value.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    out.accumulate(np.ones_like(out.value))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments plus the plateau-driven learning-rate schedule."""

    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay: float = 0.5
    plateau_patience: int = 5
    lr_floor: float = 1e-5
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    best_val: float = math.inf
    stale_epochs: int = 0

    def note_validation(self, val_loss: float) -> None:
        """Halve the learning rate when validation loss plateaus."""
        if val_loss < self.best_val - 1e-12:
            self.best_val = val_loss
            self.stale_epochs = 0
            return
        self.stale_epochs += 1
        if self.stale_epochs >= self.plateau_patience:
            self.lr = max(self.lr * self.decay, self.lr_floor)
            self.stale_epochs = 0


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update over every trainable parameter with a grad."""
    state.step += 1
    t = state.step
    for name in params:
        p = params[name]
        if not p.trainable or p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.value)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        if not np.all(np.isfinite(update)):
            raise NumericError(f"non-finite Adam update for parameter {name!r}")
        p.value -= update


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    epsilon: float = 1e-5,
    max_coords_per_tensor: int = 200,
) -> float:
    """Max relative error between reverse-mode and central finite differences.

    *loss_fn* must be pure and deterministic (disable dropout); it is called
    repeatedly while parameter entries are perturbed in place.  Coordinates
    are subsampled with a fixed stride to at most *max_coords_per_tensor*
    per parameter.
    """
    first = loss_fn()
    second = loss_fn()
    if not np.array_equal(first.value, second.value):
        raise UsageError("loss_fn is not deterministic; disable dropout for grad_check")

    for p in params.values():
        p.zero_grad()
    out = loss_fn()
    backward(out)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
        for name, p in params.items()
        if p.trainable
    }

    worst = 0.0
    for name, p in params.items():
        if not p.trainable:
            continue
        flat = p.value.reshape(-1)
        g_flat = analytic[name].reshape(-1)
        stride = max(1, -(-flat.size // max_coords_per_tensor))  # ceil division
        for i in range(0, flat.size, stride):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(loss_fn().value)
            flat[i] = orig - epsilon
            lo = float(loss_fn().value)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * epsilon)
            ad = float(g_flat[i])
            err = abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))
            if err > worst:
                worst = err
    return worst
