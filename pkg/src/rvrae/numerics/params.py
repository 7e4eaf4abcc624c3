"""Named parameter storage, initialisation and the text checkpoint format."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .random import Rng
from .tensor import DimensionError, Tensor

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible."""


class ParamStore:
    """Ordered map of parameter name -> array, each with a gradient buffer."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self.values:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.values if n.startswith(prefix)]

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def bind(self) -> dict[str, Tensor]:
        """Fresh leaf tensors for one forward pass."""
        return {n: Tensor(v, requires_grad=True, name=n) for n, v in self.values.items()}

    def constants(self) -> dict[str, Tensor]:
        """Leaf tensors that record nothing (inference)."""
        return {n: Tensor(v, name=n) for n, v in self.values.items()}

    def accumulate(self, leaves: dict[str, Tensor]) -> None:
        for n, t in leaves.items():
            if t.grad is not None:
                self.grads[n] += t.grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, v in self.values.items():
            out.add(n, v.copy())
        return out

    def load_values(self, other: "ParamStore") -> None:
        if list(other.values) != list(self.values):
            raise CheckpointError("parameter names differ")
        for n, v in other.values.items():
            if v.shape != self.values[n].shape:
                raise DimensionError(f"{n}: shape {v.shape} != {self.values[n].shape}")
            self.values[n][...] = v

    def equal(self, other: "ParamStore") -> bool:
        return list(self.values) == list(other.values) and all(
            np.array_equal(self.values[n], other.values[n]) for n in self.values)


def init_weight(rng: Rng, shape: tuple[int, int]) -> np.ndarray:
    """Uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` with fan_in = columns."""
    bound = 1.0 / np.sqrt(shape[1])
    return (2.0 * rng.uniform(shape[0] * shape[1]) - 1.0).reshape(shape) * bound


def _fmt(arr: np.ndarray) -> str:
    return ",".join(float(x).hex() for x in arr.ravel())


def save_checkpoint(path: str | Path, params: ParamStore, header: dict[str, object]) -> None:
    """Write ``params`` as ``name shape_csv value_csv`` lines after a header line.

    Values are written as hex floats, so a reload is bit-exact.
    """
    meta = " ".join(f"{k}={v}" for k, v in header.items())
    lines = [f"rvrae-checkpoint v{CHECKPOINT_VERSION} {meta}".rstrip()]
    for name, value in params.values.items():
        shape = ",".join(str(d) for d in value.shape) or "-"
        lines.append(f"{name} {shape} {_fmt(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict[str, str]]:
    text = Path(path).read_text().splitlines()
    if not text:
        raise CheckpointError(f"{path}: empty checkpoint")
    head = text[0].split()
    if len(head) < 2 or head[0] != "rvrae-checkpoint":
        raise CheckpointError(f"{path}: missing checkpoint header")
    if head[1] != f"v{CHECKPOINT_VERSION}":
        raise CheckpointError(f"{path}: unsupported version {head[1]}")
    header = dict(item.split("=", 1) for item in head[2:])
    params = ParamStore()
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        try:
            name, shape_s, values_s = line.split(" ")
            shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
            values = np.array([float.fromhex(v) for v in values_s.split(",")])
            params.add(name, values.reshape(shape))
        except (ValueError, KeyError) as exc:
            raise CheckpointError(f"{path}:{lineno}: {exc}") from exc
    return params, header
