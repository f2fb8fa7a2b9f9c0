"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)


def grad_check(f, params: ParamStore, h: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be a deterministic zero-argument callable that rebuilds its
    tape from the current parameter values and returns a scalar Tensor.
    The relative error per entry is |a - n| / max(|a|, |n|, 1e-6), so a
    constant function reports error 0.
    """
    if not (1e-6 <= h <= 1e-4):
        raise ValueError(f"step h={h} outside [1e-6, 1e-4]")
    params.zero_grad()
    loss = f()
    loss.backward()
    analytic = {k: t.grad.copy() for k, t in params.items()}

    per_param: dict[str, float] = {}
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        errs = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-6)
            errs[i] = abs(a_flat[i] - numeric) / denom
        per_param[name] = float(errs.max()) if errs.size else 0.0
        worst = max(worst, per_param[name])
    return GradCheckReport(passed=worst < tol, max_rel_error=worst,
                           per_param=per_param)
