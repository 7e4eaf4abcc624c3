from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


class InvalidStateError(RuntimeError):
    """Optimizer asked to step without usable gradients."""


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """Bias-corrected Adam update in place, then zero the gradients."""
    if len(params) == 0:
        raise InvalidStateError("adam_step on an empty parameter store")
    for name, g in params.grads.items():
        if not np.isfinite(g.sum()) and not np.isfinite(g).all():
            raise InvalidStateError(f"non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr / (1.0 - b1 ** t)
    c2 = 1.0 - b2 ** t
    for name, g in params.grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params.values[name] -= step_size * m / (np.sqrt(v / c2) + state.eps)
        g.fill(0.0)
