"""Named parameter collections and weight initialization."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .rng import RngState
from .tensor import Tensor


def glorot_uniform(rng: RngState, fan_in: int, fan_out: int, shape) -> np.ndarray:
    """Uniform in +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(tuple(shape)) * 2.0 - 1.0) * limit


class ParamStore:
    """Ordered map name -> trainable Tensor, with gradients alongside."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def gradient(self, name: str) -> np.ndarray:
        return self._params[name].grad

    def zero_grad(self) -> None:
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad[...] = 0.0

    def freeze(self) -> None:
        """Exclude these parameters from gradient accumulation."""
        for t in self._params.values():
            t.requires_grad = False

    def unfreeze(self) -> None:
        for t in self._params.values():
            t.requires_grad = True

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            if k not in state:
                raise KeyError(f"missing parameter {k!r} in state dict")
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(f"parameter {k!r}: stored shape {arr.shape} "
                                 f"!= expected {t.data.shape}")
            t.data[...] = arr
