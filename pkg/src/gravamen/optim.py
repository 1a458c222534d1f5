"""Parameter store, initialization, and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import Tensor


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParamStore:
    """Named trainable tensors in a stable registration order.

    Registration order fixes both the rng consumption during init and the
    iteration order of the optimizer, so a given seed reproduces a model
    bit for bit.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        t = Tensor(np.ascontiguousarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def matrix(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
        return self._register(name, glorot_uniform(fan_in, fan_out, rng))

    def bias(self, name: str, size: int) -> Tensor:
        return self._register(name, np.zeros(size))

    def embedding_table(self, name: str, rows: int, cols: int, rng: np.random.Generator) -> Tensor:
        return self._register(name, rng.normal(0.0, 0.02, size=(rows, cols)))

    def ln_affine(self, prefix: str, dim: int) -> tuple[Tensor, Tensor]:
        """Layer-norm gain (ones) and shift (zeros)."""
        gain = self._register(f"{prefix}.gain", np.ones(dim))
        shift = self._register(f"{prefix}.shift", np.zeros(dim))
        return gain, shift

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def n_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            raise ShapeError("snapshot names do not match parameter store")
        for k, arr in values.items():
            t = self._params[k]
            if arr.shape != t.data.shape:
                raise ShapeError(f"snapshot shape mismatch for {k!r}")
            t.data = np.ascontiguousarray(arr, dtype=np.float64)


@dataclass
class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias correction; missing gradients are treated as zero."""

    def __init__(self, params: ParamStore, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ShapeError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
        for name, t in params.items():
            self.state.m[name] = np.zeros_like(t.data)
            self.state.v[name] = np.zeros_like(t.data)

    def step(self) -> None:
        st = self.state
        st.step += 1
        for name, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            kernels.adam_step(
                t.data.ravel(), np.ascontiguousarray(g).ravel(),
                st.m[name].ravel(), st.v[name].ravel(),
                self.lr, st.beta1, st.beta2, st.eps, st.step,
            )


class SGD:
    """Plain full-batch gradient descent (used by the bag-of-words model)."""

    def __init__(self, params: ParamStore, lr: float):
        if lr <= 0:
            raise ShapeError("learning rate must be positive")
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for _, t in self.params.items():
            if t.grad is not None:
                t.data = t.data - self.lr * t.grad
