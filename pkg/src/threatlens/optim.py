"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .errors import NumericError
from .params import ParamStore


class Adam:
    """Kingma & Ba update: p -= lr * m_hat / (sqrt(v_hat) + eps).

    Gradients are read, never modified; the caller zeroes them between
    steps.  `step_count` increments exactly once per applied step.
    """

    def __init__(self, params: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1) or eps <= 0:
            raise ValueError("invalid Adam hyperparameters")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self._v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        # validate first so a NaN gradient leaves every parameter untouched
        for name, t in self.params.items():
            if t.grad is None:
                raise NumericError(f"parameter {name!r} has no gradient")
            if not np.isfinite(t.grad).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t_ = self.step_count
        bc1 = 1.0 - self.beta1 ** t_
        bc2 = 1.0 - self.beta2 ** t_
        for name, p in self.params.items():
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
