"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str | None
    tol: float
    per_parameter: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(f: Callable[[dict[str, Tensor]], Tensor], params: ParamStore,
               step: float = 1e-5, tol: float = 1e-4, floor: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` with central differences.

    ``f`` receives the bound leaf tensors of ``params`` and must be a
    deterministic function of them.  Every entry of every parameter is
    perturbed by ``+/- step``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    leaves = params.bind()
    with Tape() as tape:
        loss = f(leaves)
    tape.backward(loss)

    per_param: dict[str, float] = {}
    for name, value in params.values.items():
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(value)
        numeric = np.zeros_like(value)
        flat = value.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = f(params.constants()).item()
            flat[j] = orig - step
            down = f(params.constants()).item()
            flat[j] = orig
            numeric.reshape(-1)[j] = (up - down) / (2.0 * step)
        per_param[name] = float(relative_error(analytic, numeric, floor).max()) if value.size else 0.0

    worst = max(per_param, key=per_param.get) if per_param else None
    return GradCheckReport(per_param.get(worst, 0.0) if worst else 0.0, worst, tol, per_param)
