"""Named parameter storage and seeded initialization."""
from __future__ import annotations

from typing import Iterator, MutableSequence

import numpy as np

from .tensor import BatchNormState, Tensor

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """64-bit SplitMix stream; the only randomness source in the package."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        return (low + (high - low) * vals).reshape(shape)

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange of an empty range")
        return self.next_u64() % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def fork(self, index: int) -> "SplitMix64":
        """Independent child stream for ``index`` (e.g. one per corpus file)."""
        mixer = SplitMix64(self.state ^ ((index + 1) * 0xD1B54A32D192ED03 & _MASK64))
        return SplitMix64(mixer.next_u64())


def glorot(rng: SplitMix64, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class ParamStore:
    """Ordered name -> Tensor map plus batch-norm states.

    Iteration is always sorted by name.  Batch-norm scale/shift tensors are
    registered as ordinary parameters (``<prefix>.gamma``, ``<prefix>.beta``);
    running statistics are exposed through :meth:`buffers`.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._bn: dict[str, BatchNormState] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._params[name] = t
        return t

    def add_batchnorm(self, prefix: str, features: int) -> BatchNormState:
        state = BatchNormState.create(features)
        self.add(prefix + ".gamma", state.gamma)
        self.add(prefix + ".beta", state.beta)
        self._bn[prefix] = state
        return state

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def batchnorms(self) -> dict[str, BatchNormState]:
        return dict(sorted(self._bn.items()))

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, st in sorted(self._bn.items()):
            out[prefix + ".running_mean"] = st.running_mean
            out[prefix + ".running_var"] = st.running_var
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        prefix, _, field = name.rpartition(".")
        st = self._bn[prefix]
        if field not in ("running_mean", "running_var"):
            raise KeyError(name)
        setattr(st, field, np.array(value, dtype=np.float64).reshape(st.features))

    def set_training(self, training: bool) -> None:
        for st in self._bn.values():
            st.training = training

    def merge(self, other: "ParamStore") -> None:
        """Adopt every parameter and batch-norm state of ``other`` (names must be new)."""
        for name, t in other._params.items():
            if name in self._params:
                raise KeyError(f"duplicate parameter {name}")
            self._params[name] = t
        self._bn.update(other._bn)

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of all values, parameters and running statistics alike."""
        out = {n: t.data.copy() for n, t in self.items()}
        out.update({n: v.copy() for n, v in self.buffers().items()})
        return dict(sorted(out.items()))

    def restore(self, values: dict[str, np.ndarray]) -> None:
        buffers = self.buffers()
        for name, v in values.items():
            if name in self._params:
                self._params[name].data = np.array(v, dtype=np.float64).reshape(self._params[name].shape)
            elif name in buffers:
                self.set_buffer(name, v)
            else:
                raise KeyError(name)
