from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, DomainError, Tensor, exp, gaussian_kl as _kl, scale


@dataclass(frozen=True)
class LatentGaussian:
    """Diagonal Gaussian stored as (mean, log-variance); rows index time when 2-D."""

    mean: Tensor
    log_variance: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise DimensionError(
                f"mean {self.mean.shape} and log-variance {self.log_variance.shape} differ")

    @classmethod
    def from_variance(cls, mean, variance) -> "LatentGaussian":
        variance = np.asarray(variance, dtype=np.float64)
        if np.any(variance <= 0):
            raise DomainError("variance must be strictly positive")
        return cls(Tensor(mean), Tensor(np.log(variance)))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def std(self) -> Tensor:
        return exp(scale(self.log_variance, 0.5))


def gaussian_kl(q: LatentGaussian, p: LatentGaussian) -> Tensor:
    """KL(q || p), summed over the latent dimension."""
    if q.mean.shape != p.mean.shape:
        raise DimensionError(f"KL between dimensions {q.mean.shape} and {p.mean.shape}")
    return _kl(q.mean, q.log_variance, p.mean, p.log_variance)
