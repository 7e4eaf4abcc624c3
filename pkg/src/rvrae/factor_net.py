"""Recurrent variational factor network.

The encoder reads the cross-section of returns one month at a time and emits a
posterior Gaussian over the latent code at every step.  A prior network sees
only the previous encoder state, so it can be used at prediction time without
touching the month being predicted.  The decoder is seeded once with the
final-step latent and, conditioned on the return sequence, emits factors in
``(0, 1)^K`` plus a Gaussian over the reconstructed returns.

Parameters are plain ``dict[str, Tensor]`` mappings keyed ``encoder.*``,
``prior.*`` and ``decoder.*`` (see :func:`init_factor_params`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .numerics import (DimensionError, LatentGaussian, ParamStore, Rng, Tensor, add, affine,
                       exp, init_weight, mul, rnn_cell, scale, sigmoid, stack, tanh)

Params = Mapping[str, Tensor]

ENCODER_SHAPES = {
    "w_in": ("H", "N"), "w_encoder": ("H", "H"), "b_encoder": ("H",),
    "w_mu": ("K", "H"), "b_mu": ("K",), "w_sigma": ("K", "H"), "b_sigma": ("K",),
}
PRIOR_SHAPES = {
    "w_hidden": ("H", "H"), "b_hidden": ("H",),
    "w_mu": ("K", "H"), "b_mu": ("K",), "w_sigma": ("K", "H"), "b_sigma": ("K",),
}
DECODER_SHAPES = {
    "w_z": ("H", "K"), "b_z": ("H",), "w_decoder": ("H", "H"), "w_r": ("H", "N"),
    "b_decoder": ("H",), "w_out": ("K", "H"), "b_out": ("K",),
    "w_mu_r": ("N", "H"), "b_mu_r": ("N",), "w_sigma_r": ("N", "H"), "b_sigma_r": ("N",),
}


def init_factor_params(store: ParamStore, rng: Rng, n_assets: int, n_factors: int, hidden: int) -> None:
    dims = {"N": n_assets, "K": n_factors, "H": hidden}
    for prefix, shapes in (("encoder", ENCODER_SHAPES), ("prior", PRIOR_SHAPES),
                           ("decoder", DECODER_SHAPES)):
        for name, symbolic in shapes.items():
            shape = tuple(dims[s] for s in symbolic)
            value = init_weight(rng, shape) if len(shape) == 2 else np.zeros(shape)
            store.add(f"{prefix}.{name}", value)


def _as_sequence(returns) -> list[Tensor]:
    if isinstance(returns, Tensor):
        rows = [Tensor(r) for r in returns.value]
    elif isinstance(returns, np.ndarray):
        rows = [Tensor(r) for r in np.atleast_2d(returns)]
    else:
        rows = [r if isinstance(r, Tensor) else Tensor(r) for r in returns]
    if not rows:
        raise DimensionError("empty return sequence")
    return rows


def encode_sequence(returns, p: Params) -> tuple[LatentGaussian, list[Tensor]]:
    """Run the encoder RNN from ``h_0 = 0``.

    Returns the stacked posteriors (row ``t`` is q(z_t | r_<=t)) and the list
    of hidden states ``h_1 .. h_T``.
    """
    rows = _as_sequence(returns)
    n = p["encoder.w_in"].shape[1]
    h = Tensor(np.zeros(p["encoder.w_encoder"].shape[0]))
    hidden = []
    for r in rows:
        if r.shape != (n,):
            raise DimensionError(f"return vector {r.shape} does not match universe size {n}")
        h = rnn_cell(h, r, p["encoder.w_encoder"], p["encoder.w_in"], p["encoder.b_encoder"])
        hidden.append(h)
    hs = stack(hidden)
    post = LatentGaussian(affine(hs, p["encoder.w_mu"], p["encoder.b_mu"]),
                          affine(hs, p["encoder.w_sigma"], p["encoder.b_sigma"]))
    return post, hidden


def prior_from_hidden(h_prev: Tensor, p: Params) -> LatentGaussian:
    """History-only Gaussian for the next latent; accepts one state or a stack of them."""
    if h_prev.shape[-1] != p["prior.w_hidden"].shape[1]:
        raise DimensionError(f"hidden state {h_prev.shape} does not match prior input "
                             f"{p['prior.w_hidden'].shape[1]}")
    a = tanh(affine(h_prev, p["prior.w_hidden"], p["prior.b_hidden"]))
    return LatentGaussian(affine(a, p["prior.w_mu"], p["prior.b_mu"]),
                          affine(a, p["prior.w_sigma"], p["prior.b_sigma"]))


def priors_for_sequence(hidden: Sequence[Tensor], p: Params) -> LatentGaussian:
    """Stacked priors for steps ``1..T`` from ``h_0 = 0, h_1 .. h_{T-1}``."""
    h0 = Tensor(np.zeros(hidden[0].shape))
    return prior_from_hidden(stack([h0, *hidden[:-1]]), p)


def reparameterize(g: LatentGaussian, eps: Tensor) -> Tensor:
    """``mean + exp(logvar / 2) * eps``; ``eps`` is a constant."""
    if eps.shape != g.mean.shape:
        raise DimensionError(f"eps {eps.shape} does not match latent {g.mean.shape}")
    return add(g.mean, mul(exp(scale(g.log_variance, 0.5)), eps))


@dataclass
class DecoderOutput:
    factors: Tensor            # [T, K], each entry in (0, 1)
    hidden: list[Tensor]       # h_1 .. h_T
    initial: Tensor            # h_0 = tanh(w_z z + b_z)

    def reconstruction(self, p: Params, hidden: Tensor | None = None) -> LatentGaussian:
        hs = stack(self.hidden) if hidden is None else hidden
        return reconstruction_heads(hs, p)


def decoder_init(z: Tensor, p: Params) -> Tensor:
    if z.shape != (p["decoder.w_z"].shape[1],):
        raise DimensionError(f"latent {z.shape} does not match decoder input {p['decoder.w_z'].shape}")
    return tanh(affine(z, p["decoder.w_z"], p["decoder.b_z"]))


def decoder_step(h: Tensor, r: Tensor, p: Params) -> Tensor:
    if r.shape != (p["decoder.w_r"].shape[1],):
        raise DimensionError(f"return vector {r.shape} does not match decoder input "
                             f"{p['decoder.w_r'].shape[1]}")
    return rnn_cell(h, r, p["decoder.w_decoder"], p["decoder.w_r"], p["decoder.b_decoder"])


def factor_output(h: Tensor, p: Params) -> Tensor:
    return sigmoid(affine(h, p["decoder.w_out"], p["decoder.b_out"]))


def reconstruction_heads(h: Tensor, p: Params) -> LatentGaussian:
    """Gaussian over the return cross-section read off decoder state(s)."""
    return LatentGaussian(affine(h, p["decoder.w_mu_r"], p["decoder.b_mu_r"]),
                          affine(h, p["decoder.w_sigma_r"], p["decoder.b_sigma_r"]))


def decode_sequence(z: Tensor, returns, p: Params) -> DecoderOutput:
    """Teacher-forced decoder pass seeded with the final-step latent ``z``."""
    rows = _as_sequence(returns)
    h = decoder_init(z, p)
    initial = h
    hidden = []
    for r in rows:
        h = decoder_step(h, r, p)
        hidden.append(h)
    return DecoderOutput(factor_output(stack(hidden), p), hidden, initial)
