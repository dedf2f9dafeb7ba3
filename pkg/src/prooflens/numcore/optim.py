"""Store-level backward pass, Adam, and finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .params import ParamStore
from .tensor import Tensor, gradients


class KeyMismatch(KeyError):
    pass


def backward(loss: Tensor, store: ParamStore) -> dict[str, np.ndarray]:
    """Gradient of ``loss`` for every parameter in ``store``.

    Parameters the loss does not depend on get zero arrays.
    """
    grads = gradients(loss)
    out = {}
    for name, t in store.items():
        g = grads.get(id(t))
        out[name] = np.zeros_like(t.data) if g is None else g
    return out


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              names: Iterable[str] | None = None) -> None:
    """One bias-corrected Adam update, in place.

    ``names`` restricts the update to a subset of the store (frozen parameters
    are simply left out); gradients must be present for exactly that subset.
    """
    keys = sorted(names) if names is not None else store.names()
    if set(grads) != set(keys):
        missing = set(keys) ^ set(grads)
        raise KeyMismatch(f"gradient keys differ from parameters: {sorted(missing)[:5]}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name in keys:
        p = store[name]
        g = grads[name]
        if g.shape != p.shape:
            raise KeyMismatch(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(forward: Callable[[], Tensor], store: ParamStore, eps: float = 1e-6,
               names: Iterable[str] | None = None,
               analytic: dict[str, np.ndarray] | None = None) -> float:
    """Largest relative disagreement between autodiff and central differences.

    The error for one entry is ``|a - c| / max(1e-8, |a| + |c|)``.  Passing
    ``analytic`` checks a caller-supplied gradient instead of recomputing it.
    """
    saved = store.snapshot()
    if analytic is None:
        analytic = backward(forward(), store)
        store.restore(saved)
    worst = 0.0
    for name in (sorted(names) if names is not None else store.names()):
        p = store[name]
        a_grad = analytic[name]
        for idx in np.ndindex(p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + eps
            f_plus = forward().item()
            p.data[idx] = orig - eps
            f_minus = forward().item()
            p.data[idx] = orig
            store.restore(saved)
            c = (f_plus - f_minus) / (2.0 * eps)
            a = float(a_grad[idx])
            err = abs(a - c) / max(1e-8, abs(a) + abs(c))
            worst = max(worst, err)
    return worst
