"""Differentiable dense-matrix substrate: tensors, tape, Adam, RNG, KL, checkpoints."""

from .gaussian import LatentGaussian, gaussian_kl
from .gradcheck import GradCheckReport, grad_check
from .optim import AdamState, InvalidStateError, adam_step
from .params import (CheckpointError, ParamStore, init_weight, load_checkpoint,
                     save_checkpoint)
from .random import Rng, derive_seed, sample_standard_normal
from .tensor import (DimensionError, DomainError, NumericError, Tape, Tensor, add, affine,
                     batched_matvec, columns, concat, corrupt_backward, detach, exp, lstm_cell,
                     mean, mul, rnn_cell, scale, sigmoid, stack, sub, take, tanh)
from .tensor import sum as tsum

__all__ = [
    "AdamState", "CheckpointError", "DimensionError", "DomainError", "GradCheckReport",
    "InvalidStateError", "LatentGaussian", "NumericError", "ParamStore", "Rng", "Tape", "Tensor",
    "adam_step", "add", "affine", "batched_matvec", "columns", "concat", "corrupt_backward",
    "derive_seed", "detach", "exp", "gaussian_kl", "grad_check", "init_weight", "load_checkpoint",
    "lstm_cell", "mean", "mul", "rnn_cell", "sample_standard_normal", "save_checkpoint", "scale",
    "sigmoid", "stack", "sub", "take", "tanh", "tsum",
]
