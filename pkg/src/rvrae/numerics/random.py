"""Seeded, counter-based random numbers.

Uniforms come from numpy's Philox bit generator keyed by the seed and
positioned by an explicit counter; normals are produced from them with the
Box-Muller transform.  The n-th block of draws therefore depends only on the
seed and the block position, not on any other generator in the process.
"""

from __future__ import annotations

import hashlib

import numpy as np

_WORDS_PER_BLOCK = 4  # Philox-4x64 emits four 64-bit words per counter step


def derive_seed(seed: int, purpose: str) -> int:
    """Stable 64-bit sub-seed for ``(seed, purpose)`` (first 8 bytes of SHA-256)."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Deterministic stream of uniforms and standard normals."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2 ** 64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self.counter = 0

    def child(self, purpose: str) -> "Rng":
        return Rng(derive_seed(self.seed, purpose))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in ``[0, 1)``; consumes whole Philox blocks."""
        bits = np.random.Philox(key=self.seed, counter=self.counter)
        out = np.random.Generator(bits).random(n)
        self.counter += -(-n // _WORDS_PER_BLOCK)
        return out

    def normal(self, shape) -> np.ndarray:
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(d) for d in shape)
        n = int(np.prod(shape))
        pairs = -(-n // 2)
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[:pairs]  # (0, 1]: log stays finite
        u2 = u[pairs:]
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(2.0 * np.pi * u2), radius * np.sin(2.0 * np.pi * u2)])
        return z[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


def sample_standard_normal(rng: Rng, shape) -> "Tensor":
    """i.i.d. N(0, 1) draws as a constant tensor (no gradient flows into it)."""
    from .tensor import Tensor

    return Tensor(rng.normal(shape))
