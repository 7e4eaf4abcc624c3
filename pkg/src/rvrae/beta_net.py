"""LSTM exposure network shared across stocks.

Each stock's characteristic history is run through the same LSTM; the final
hidden state is its factor exposure vector.  Gate names are spelled out
(``input``, ``forget``, ``output``, ``cand``) so the forget gate is not confused
with the latent factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import AlignmentError
from .numerics import (DimensionError, ParamStore, Rng, Tensor, affine, columns, concat,
                       init_weight, lstm_cell, stack)

Params = Mapping[str, Tensor]
GATES = ("input", "forget", "output", "cand")


def init_beta_params(store: ParamStore, rng: Rng, n_chars: int, hidden: int, n_factors: int) -> None:
    """Gate weights ``W_*`` (recurrent) and ``U_*`` (input), zero biases.

    A ``proj`` layer to ``n_factors`` is added only when ``hidden != n_factors``.
    """
    for gate in GATES:
        store.add(f"beta.W_{gate}", init_weight(rng, (hidden, hidden)))
        store.add(f"beta.U_{gate}", init_weight(rng, (hidden, n_chars)))
        store.add(f"beta.b_{gate}", np.zeros(hidden))
    if hidden != n_factors:
        store.add("beta.w_proj", init_weight(rng, (n_factors, hidden)))
        store.add("beta.b_proj", np.zeros(n_factors))


@dataclass(frozen=True)
class LstmState:
    hc: Tensor  # [M, 2H]: hidden and cell side by side

    @classmethod
    def zeros(cls, n_rows: int, hidden: int) -> "LstmState":
        return cls(Tensor(np.zeros((n_rows, 2 * hidden))))

    @property
    def hidden_size(self) -> int:
        return self.hc.shape[1] // 2

    @property
    def h(self) -> Tensor:
        return columns(self.hc, 0, self.hidden_size)

    @property
    def c(self) -> Tensor:
        return columns(self.hc, self.hidden_size, 2 * self.hidden_size)


def stacked_gates(p: Params) -> tuple[Tensor, Tensor, Tensor]:
    return (concat([p[f"beta.W_{g}"] for g in GATES]),
            concat([p[f"beta.U_{g}"] for g in GATES]),
            concat([p[f"beta.b_{g}"] for g in GATES]))


def lstm_step(x_t: Tensor, state: LstmState, p: Params, gates=None) -> LstmState:
    """One step for a batch of stocks (``x_t`` is ``[M, C]``)."""
    W, U, b = gates if gates is not None else stacked_gates(p)
    if x_t.shape[-1] != U.shape[1]:
        raise DimensionError(f"characteristics {x_t.shape} do not match input size {U.shape[1]}")
    return LstmState(lstm_cell(x_t, state.hc, W, U, b))


def _history_array(history) -> np.ndarray:
    if isinstance(history, Tensor):
        return history.value
    if isinstance(history, np.ndarray):
        return history
    # list of per-stock [T, C] histories
    lengths = {np.shape(h)[0] for h in history}
    if len(lengths) != 1:
        raise AlignmentError(f"ragged characteristic histories, lengths {sorted(lengths)}")
    return np.stack([np.asarray(h, dtype=np.float64) for h in history], axis=1)


def exposures(h: Tensor, p: Params) -> Tensor:
    return affine(h, p["beta.w_proj"], p["beta.b_proj"]) if "beta.w_proj" in p else h


def beta_from_characteristics(history, p: Params, every_step: bool = False) -> Tensor:
    """Exposures from characteristic histories ``[T, M, C]`` (time, stock, characteristic).

    Returns ``[M, K]`` from the final state, or ``[T, M, K]`` with the exposure
    after each step when ``every_step`` is set.
    """
    x = _history_array(history)
    if x.ndim != 3 or x.shape[0] < 1:
        raise AlignmentError(f"characteristic history must be [T, M, C] with T >= 1, got {x.shape}")
    gates = stacked_gates(p)
    state = LstmState.zeros(x.shape[1], gates[0].shape[1])
    outs = []
    for t in range(x.shape[0]):
        state = lstm_step(Tensor(x[t]), state, p, gates)
        if every_step:
            outs.append(exposures(state.h, p))
    return stack(outs) if every_step else exposures(state.h, p)
