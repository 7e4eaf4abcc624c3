"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op computes its forward value eagerly with numpy.  When a :class:`Tape`
is active and at least one input requires a gradient, the op appends a record
``(name, output, inputs, backward)`` to the tape; :meth:`Tape.backward` replays
the records in reverse and accumulates gradients on the inputs.

Outside any tape nothing is recorded, which is the fast path for inference.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NumericError(FloatingPointError):
    """An op produced a non-finite value."""


class DomainError(ValueError):
    """An argument lies outside the domain of the op."""


class Tensor:
    """Immutable float64 array plus an optional gradient accumulator."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 op: str = "constant"):
        self._set(np.array(value, dtype=np.float64), requires_grad, name, op)

    def _set(self, arr: np.ndarray, requires_grad: bool, name, op: str) -> None:
        # one reduction on the fast path; an overflowing sum falls back to the exact test
        if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
            raise NumericError(f"non-finite value produced by '{op}'")
        arr.flags.writeable = False
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, value: np.ndarray, requires_grad: bool, op: str) -> "Tensor":
        """Adopt a freshly computed op output without copying it."""
        out = cls.__new__(cls)
        arr = value if isinstance(value, np.ndarray) and value.dtype == np.float64 \
            else np.asarray(value, dtype=np.float64)
        out._set(arr, requires_grad, None, op)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar; all routed through the recorded ops below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of differentiable op applications.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded.  A tape is meant to live for a single training step.
    """

    _active: list["Tape"] = []

    def __init__(self):
        self.records: list[tuple[str, Tensor, tuple[Tensor, ...], Backward]] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.pop()

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        for op, out, inputs, fn in reversed(self.records):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            if op in _corrupted:
                grads = [None if g is None else g * _corrupted[op] for g in grads]
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.array(g, dtype=np.float64)
                else:
                    t.grad = t.grad + g


# op name -> multiplier applied to its input gradients; negative-control hook
_corrupted: dict[str, float] = {}


@contextmanager
def corrupt_backward(op: str, factor: float = 1.5) -> Iterator[None]:
    """Temporarily scale the backward rule of ``op`` (gradient-check negative control)."""
    _corrupted[op] = factor
    try:
        yield
    finally:
        _corrupted.pop(op, None)


def _result(op: str, value: np.ndarray, inputs: tuple[Tensor, ...], fn: Backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(value, needs, op)
    if needs and Tape._active:
        Tape._active[-1].records.append((op, out, inputs, fn))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} does not match {b.shape}")


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only the trailing-axis bias broadcast used by affine/rnn_cell is supported
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _result("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _result("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _result("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    return _result("scale", a.value * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _result("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


_sigmoid = expit  # overflow-safe logistic


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    return _result("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return _result("exp", y, (a,), lambda g: (g * y,))


def detach(a: Tensor) -> Tensor:
    """Same value, cut from the graph."""
    return Tensor(a.value)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _result("sum", a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape),))


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.size)


def stack(items: Sequence[Tensor]) -> Tensor:
    items = tuple(as_tensor(t) for t in items)
    if not items:
        raise DimensionError("stack of an empty sequence")
    for t in items[1:]:
        _same_shape("stack", items[0], t)
    value = np.stack([t.value for t in items])
    return _result("stack", value, items, lambda g: tuple(g[i] for i in range(len(items))))


def take(a: Tensor, index: int) -> Tensor:
    """Row ``index`` along the leading axis."""
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result("take", a.value[index], (a,), back)


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``[..., start:stop]`` along the trailing axis."""
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _result("columns", a.value[..., start:stop], (a,), back)


def concat(items: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = tuple(as_tensor(t) for t in items)
    value = np.concatenate([t.value for t in items], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in items])[:-1]
    return _result("concat", value, items, lambda g: tuple(np.split(g, cuts, axis=axis)))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``W @ x + b`` for a vector ``x``, applied row-wise when ``x`` is a matrix."""
    x, W = as_tensor(x), as_tensor(W)
    if W.value.ndim != 2 or x.value.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: x {x.shape} incompatible with W {W.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise DimensionError(f"affine: bias {b.shape} incompatible with W {W.shape}")
    xv, Wv = x.value, W.value
    y = xv @ Wv.T
    if b is not None:
        y = y + b.value

    def back(g):
        gx = g @ Wv
        gW = np.outer(g, xv) if xv.ndim == 1 else g.T @ xv
        return (gx, gW) if b is None else (gx, gW, _sum_to(g, b.shape))

    inputs = (x, W) if b is None else (x, W, b)
    return _result("affine", y, inputs, back)


def batched_matvec(B: Tensor, f: Tensor) -> Tensor:
    """``out[t, i] = sum_k B[t, i, k] * f[t, k]``: per-timestep exposures times factors."""
    if B.value.ndim != 3 or f.value.ndim != 2 or B.shape[0] != f.shape[0] or B.shape[2] != f.shape[1]:
        raise DimensionError(f"batched_matvec: B {B.shape} incompatible with f {f.shape}")
    Bv, fv = B.value, f.value
    y = np.einsum("tik,tk->ti", Bv, fv)
    return _result("batched_matvec", y, (B, f),
                   lambda g: (g[:, :, None] * fv[:, None, :], np.einsum("ti,tik->tk", g, Bv)))


# ---------------------------------------------------------------------------
# fused recurrent cells
# ---------------------------------------------------------------------------

def rnn_cell(h: Tensor, x: Tensor, W_h: Tensor, W_x: Tensor, b: Tensor) -> Tensor:
    """``tanh(W_h @ h + W_x @ x + b)`` as one recorded op."""
    if (W_h.shape != (b.shape[0], h.shape[-1]) or W_x.shape != (b.shape[0], x.shape[-1])
            or b.value.ndim != 1):
        raise DimensionError(
            f"rnn_cell: h {h.shape}, x {x.shape}, W_h {W_h.shape}, W_x {W_x.shape}, b {b.shape}")
    hv, xv, Whv, Wxv = h.value, x.value, W_h.value, W_x.value
    y = np.tanh(Whv @ hv + Wxv @ xv + b.value)

    def back(g):
        d = g * (1.0 - y * y)
        return (Whv.T @ d, Wxv.T @ d, np.outer(d, hv), np.outer(d, xv), d)

    return _result("rnn_cell", y, (h, x, W_h, W_x, b), back)


def lstm_cell(x: Tensor, state: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """One LSTM step over a batch of rows.

    ``state`` is ``[B, 2H]`` holding ``(h, c)`` side by side; ``W`` is ``[4H, H]``,
    ``U`` is ``[4H, C]`` and ``b`` is ``[4H]`` with gate blocks ordered
    input, forget, output, candidate.  Returns the next ``[B, 2H]`` state.
    """
    H = W.shape[1]
    if (state.value.ndim != 2 or state.shape[1] != 2 * H or W.shape != (4 * H, H)
            or U.shape != (4 * H, x.shape[-1]) or b.shape != (4 * H,)
            or x.value.ndim != 2 or x.shape[0] != state.shape[0]):
        raise DimensionError(
            f"lstm_cell: x {x.shape}, state {state.shape}, W {W.shape}, U {U.shape}, b {b.shape}")
    xv, sv, Wv, Uv = x.value, state.value, W.value, U.value
    h_prev, c_prev = sv[:, :H], sv[:, H:]
    pre = h_prev @ Wv.T + xv @ Uv.T + b.value
    gates = _sigmoid(pre[:, :3 * H])
    i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
    g = np.tanh(pre[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc

    def back(grad):
        gh, gc = grad[:, :H], grad[:, H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dpre = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            gh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ], axis=1)
        dstate = np.concatenate([dpre @ Wv, dc * f], axis=1)
        return (dpre @ Uv, dstate, dpre.T @ h_prev, dpre.T @ xv, dpre.sum(axis=0))

    return _result("lstm_cell", np.concatenate([h, c], axis=1), (x, state, W, U, b), back)


# ---------------------------------------------------------------------------
# Gaussian divergence
# ---------------------------------------------------------------------------

def gaussian_kl(q_mean: Tensor, q_logvar: Tensor, p_mean: Tensor, p_logvar: Tensor) -> Tensor:
    """KL(q || p) between diagonal Gaussians parameterised by log-variance.

    Sums over the trailing axis, so ``[K]`` inputs give a scalar and ``[T, K]``
    inputs give one divergence per row.
    """
    for t in (q_logvar, p_mean, p_logvar):
        _same_shape("gaussian_kl", q_mean, t)
    qm, qlv, pm, plv = q_mean.value, q_logvar.value, p_mean.value, p_logvar.value
    ratio = np.exp(qlv - plv)
    inv_p = np.exp(-plv)
    diff = pm - qm
    terms = 0.5 * (ratio + diff * diff * inv_p - 1.0 + plv - qlv)
    value = terms.sum(axis=-1)

    def back(g):
        g = np.expand_dims(g, -1)
        d_qm = -g * diff * inv_p
        d_qlv = g * 0.5 * (ratio - 1.0)
        d_plv = g * 0.5 * (1.0 - ratio - diff * diff * inv_p)
        return (d_qm, d_qlv, -d_qm, d_plv)

    return _result("gaussian_kl", value, (q_mean, q_logvar, p_mean, p_logvar), back)
