"""Dense float64 tensors with a recorded tape for reverse-mode differentiation.

Every operation returns a new :class:`Tensor` holding a closure that maps the
output gradient to parent gradients.  :func:`backward` walks the recorded
graph in reverse topological order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotAScalar(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced a non-finite value")


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise NotAScalar(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    _check_finite(data, op)
    rg = any(p.requires_grad for p in parents)
    if not rg:
        return Tensor(data)
    return Tensor(data, True, tuple(parents), backward)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- primitives

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), back, "matmul")


def spmm(a, x: Tensor) -> Tensor:
    """Product of a constant (possibly scipy-sparse) matrix with ``x``."""
    if a.shape[1] != x.shape[0] or x.data.ndim != 2:
        raise ShapeMismatch(f"spmm {a.shape} @ {x.shape}")
    out = np.asarray(a @ x.data)
    at = a.T
    return _make(out, (x,), lambda g: (np.asarray(at @ g),), "spmm")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}") from exc

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), back, "add")


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}") from exc

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * c
    return _make(out, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)
    return _make(out, (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose needs a matrix, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def sum_rows(a: Tensor) -> Tensor:
    """Sum over rows: (n, d) -> (1, d)."""
    out = a.data.sum(axis=0, keepdims=True)
    n = a.shape[0]
    return _make(out, (a,), lambda g: (np.repeat(g, n, axis=0),), "sum_rows")


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: (n, d) -> (1, d)."""
    n = a.shape[0]
    if n == 0:
        raise ShapeMismatch("mean over zero rows")
    out = a.data.sum(axis=0, keepdims=True) / n
    return _make(out, (a,), lambda g: (np.repeat(g / n, n, axis=0),), "mean_rows")


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())
    shape = a.shape
    return _make(out, (a,), lambda g: (np.full(shape, float(g)),), "sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.sum() / n)
    shape = a.shape
    return _make(out, (a,), lambda g: (np.full(shape, float(g) / n),), "mean_all")


def dot(a, b) -> Tensor:
    """Inner product of two equally shaped tensors, returned as a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"dot {a.shape} . {b.shape}")
    out = np.asarray((a.data * b.data).sum())

    def back(g):
        g = float(g)
        return g * b.data, g * a.data

    return _make(out, (a, b), back, "dot")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeMismatch("concat_rows needs matrices of equal width")
    out = np.concatenate([p.data for p in parts], axis=0)
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(out, parts, back, "concat_rows")


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    out = a.data[:, lo:hi].copy()
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[:, lo:hi] = g
        return (full,)

    return _make(out, (a,), back, "slice_cols")


def take_rows(a: Tensor, index: Sequence[int]) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    out = a.data[idx]
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), back, "take_rows")


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax over a 1-D score vector; masked-out entries get probability 0."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if mask is None:
        mask = np.ones(z.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != z.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs logits {z.shape}")
    if not mask.any():
        raise ValueError("softmax with every entry masked")
    top = z[mask].max()
    e = np.where(mask, np.exp(np.where(mask, z - top, 0.0)), 0.0)
    return e / e.sum()


def softmax_nll(logits: Tensor, target: int, mask: np.ndarray | None = None) -> Tensor:
    """Negative log-likelihood of ``target`` under a masked softmax of ``logits``.

    ``logits`` is a vector or a single-row matrix.  Max-subtraction keeps the
    exponentials bounded.
    """
    z = logits.data.reshape(-1)
    if mask is None:
        mask = np.ones(z.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != z.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs logits {z.shape}")
    if not (0 <= target < z.size) or not mask[target]:
        raise ValueError(f"target {target} is not an unmasked entry")
    top = z[mask].max()
    shifted = np.where(mask, z - top, 0.0)
    e = np.where(mask, np.exp(shifted), 0.0)
    total = e.sum()
    out = np.asarray(np.log(total) - shifted[target])
    probs = e / total
    shape = logits.shape

    def back(g):
        grad = probs.copy()
        grad[target] -= 1.0
        return ((float(g) * grad).reshape(shape),)

    return _make(out, (logits,), back, "softmax_nll")


# -------------------------------------------------------------- batch norm

@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one normalized layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, features: int) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones((1, features)), requires_grad=True),
            beta=Tensor(np.zeros((1, features)), requires_grad=True),
            running_mean=np.zeros(features),
            running_var=np.ones(features),
        )

    @property
    def features(self) -> int:
        return self.running_mean.shape[0]


def batchnorm(x: Tensor, state: BatchNormState,
              segments: Iterable[tuple[int, int]] | None = None) -> Tensor:
    """Normalize the columns of ``x``.

    In training mode each ``(start, stop)`` row segment is normalized by its own
    batch statistics (biased variance) and the running statistics are updated
    once per segment, in order.  Columns with zero spread normalize to 0.
    """
    if x.data.ndim != 2 or x.shape[1] != state.features:
        raise ShapeMismatch(f"batchnorm input {x.shape} vs {state.features} features")
    n = x.shape[0]
    if n < 1:
        raise ShapeMismatch("batchnorm needs at least one row")
    gamma, beta = state.gamma, state.beta
    if not state.training:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv
        out = xhat * gamma.data + beta.data

        def back_eval(g):
            return (g * gamma.data * inv,
                    (g * xhat).sum(axis=0, keepdims=True),
                    g.sum(axis=0, keepdims=True))

        return _make(out, (x, gamma, beta), back_eval, "batchnorm")

    segs = [(0, n)] if segments is None else list(segments)
    xhat = np.empty_like(x.data)
    invs = []
    for lo, hi in segs:
        block = x.data[lo:hi]
        mean = block.sum(axis=0) / (hi - lo)
        centered = block - mean
        var = (centered * centered).sum(axis=0) / (hi - lo)
        inv = 1.0 / np.sqrt(var + state.eps)
        flat = block.max(axis=0) == block.min(axis=0)
        xhat[lo:hi] = np.where(flat, 0.0, centered * inv)
        invs.append(inv)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var
    out = xhat * gamma.data + beta.data

    def back_train(g):
        gx = np.empty_like(g)
        dxhat = g * gamma.data
        for (lo, hi), inv in zip(segs, invs):
            d = dxhat[lo:hi]
            xh = xhat[lo:hi]
            k = hi - lo
            gx[lo:hi] = inv * (d - d.sum(axis=0) / k - xh * ((d * xh).sum(axis=0) / k))
        return gx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _make(out, (x, gamma, beta), back_train, "batchnorm")


# ----------------------------------------------------------------- backward

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def gradients(loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``loss`` keyed by ``id`` of every reachable tensor."""
    if loss.data.size != 1:
        raise NotAScalar(f"backward needs a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if not loss.requires_grad:
        return grads
    for node in reversed(_toposort(loss)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
    return grads
