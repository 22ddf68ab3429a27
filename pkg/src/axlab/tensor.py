"""Dense 2-D float64 tensors with tape-based reverse-mode autodiff.

Everything in the library computes on these. A :class:`Tensor` wraps a
row-major ``(rows, cols)`` float64 array plus an optional gradient buffer.
Operations executed inside a ``with Tape():`` block are recorded when at
least one input participates (is a ``requires_grad`` leaf or was itself
produced on the active tape); :func:`backward` then replays the record
list in reverse. Values are immutable by convention after creation; only
``grad`` buffers mutate.

Gradients accumulate across repeated :func:`backward` calls until
:func:`zero_grad` resets them. One tape may be active per thread; tensors
that never touch a tape are freely shareable across threads.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateRowError, ShapeError, UntrackedValueError

_LOCAL = threading.local()


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class Tensor:
    """A 2-D float64 value, optionally participating in gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "tape_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D; got array of shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape: "Tape | None" = None
        self.tape_id: int | None = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flags})"

    # operator sugar; all arithmetic goes through the module-level ops so
    # recording happens in exactly one place per op
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


class Tape:
    """Ordered record of operations for one forward/backward cycle.

    Records are appended in execution order, so inputs always precede the
    operations that consume them; the backward pass walks the list once in
    reverse. Use as a context manager::

        with Tape():
            loss = ...
        backward(loss)
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, *exc):
        _LOCAL.tape = None
        return False

    def __len__(self) -> int:
        return len(self._records)


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    """Attach ``out`` to the active tape if any input participates."""
    tape = _active_tape()
    if tape is None:
        return out
    if any(t.requires_grad or t.tape is tape for t in inputs):
        out.tape = tape
        out.tape_id = len(tape._records)
        tape._records.append((out, inputs, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every participant of the tape that produced ``loss``.

    ``loss`` must be a 1x1 tensor recorded on a tape. Gradients add into any
    existing buffers, so repeated calls accumulate; call :func:`zero_grad`
    between steps.
    """
    if loss.tape is None:
        raise UntrackedValueError("backward target was not recorded on any tape")
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    records = loss.tape._records
    pending: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    tensors: dict[int, Tensor] = {id(loss): loss}
    leaves: dict[int, Tensor] = {}

    for out, inputs, fn in reversed(records[: loss.tape_id + 1]):
        for t in inputs:
            if t.requires_grad:
                leaves[id(t)] = t
        g = pending.pop(id(out), None)
        if g is None:
            continue
        out.grad = g if out.grad is None else out.grad + g
        for t, contrib in fn(g):
            if not (t.requires_grad or t.tape is loss.tape):
                continue  # constant input: gradient discarded
            key = id(t)
            tensors[key] = t
            if key in pending:
                pending[key] = pending[key] + contrib
            else:
                pending[key] = contrib

    # whatever is still pending belongs to leaves (nothing produced them)
    for key, g in pending.items():
        t = tensors[key]
        t.grad = g if t.grad is None else t.grad + g
    # leaves on the walked subgraph that received nothing get explicit zeros
    for t in leaves.values():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    """Drop gradient buffers so the next backward() starts fresh."""
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; recorded on the active tape when an input participates."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _record(out, (a, b), back)


def _broadcast_back(t: Tensor, g: np.ndarray) -> np.ndarray:
    if t.shape == g.shape:
        return g
    return g.sum(axis=0, keepdims=True)


def _check_addable(a: Tensor, b: Tensor, opname: str) -> None:
    ok = a.shape == b.shape or (
        a.cols == b.cols and (a.rows == 1 or b.rows == 1)
    )
    if not ok:
        raise ShapeError(f"{opname}: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1xc operand broadcasts over rows (bias add)."""
    _check_addable(a, b, "add")
    out = Tensor(a.data + b.data)

    def back(g):
        return [(a, _broadcast_back(a, g)), (b, _broadcast_back(b, g))]

    return _record(out, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference with the same broadcasting as :func:`add`."""
    _check_addable(a, b, "sub")
    out = Tensor(a.data - b.data)

    def back(g):
        return [(a, _broadcast_back(a, g)), (b, _broadcast_back(b, -g))]

    return _record(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def back(g):
        return [(a, g * b.data), (b, g * a.data)]

    return _record(out, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: [(a, g * s)])


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy())
    return _record(out, (a,), lambda g: [(a, g.T)])


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    out = Tensor(np.array([[a.data.sum()]]))
    return _record(out, (a,), lambda g: [(a, np.full_like(a.data, g[0, 0]))])


def mean_rows(a: Tensor) -> Tensor:
    """Column means as a 1xc tensor (pooling over the row axis)."""
    n = a.rows
    out = Tensor(a.data.mean(axis=0, keepdims=True))
    return _record(out, (a,), lambda g: [(a, np.repeat(g, n, axis=0) / n)])


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors with equal row counts along the column axis."""
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row counts differ, {p.shape} vs ({rows}, *)")
    widths = [p.cols for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    offsets = np.cumsum([0] + widths)

    def back(g):
        return [
            (p, g[:, offsets[i] : offsets[i + 1]]) for i, p in enumerate(parts)
        ]

    return _record(out, tuple(parts), back)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows by integer index; duplicate indices accumulate gradient."""
    indices = np.asarray(idx, dtype=np.int64).ravel()
    if indices.size and (indices.min() < 0 or indices.max() >= a.rows):
        raise IndexError(f"row index out of range for {a.shape}")
    out = Tensor(a.data[indices])

    def back(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, indices, g)
        return [(a, acc)]

    return _record(out, (a,), back)


def softmax_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax with optional pre-normalization masking.

    ``mask`` is a boolean keep-matrix of the same shape; excluded entries
    behave as a score of minus infinity, i.e. they get weight exactly zero
    and the remaining entries renormalize among themselves. Stabilized by
    subtracting each row's max over kept entries.
    """
    z = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError(f"mask shape {mask.shape} != tensor shape {a.shape}")
        dead = ~mask.any(axis=1)
        if dead.any():
            raise DegenerateRowError(
                f"row {int(np.argmax(dead))} has no unmasked entries"
            )
        z = np.where(mask, z, -np.inf)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def back(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return [(a, s * (g - dot))]

    return _record(out, (a,), back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each row to zero mean / unit variance, then affine map.

    ``gain`` and ``bias`` are 1 x cols. Variance is the population variance,
    regularized by ``eps`` under the square root.
    """
    if gain.shape != (1, a.cols) or bias.shape != (1, a.cols):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be (1, {a.cols})"
        )
    x = a.data
    c = a.cols
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def back(g):
        dxhat = g * gain.data
        # per-row chain through mean and variance
        dsum = dxhat.sum(axis=1, keepdims=True)
        dxdot = (dxhat * xhat).sum(axis=1, keepdims=True)
        dx = inv * (dxhat - dsum / c - xhat * dxdot / c)
        return [
            (a, dx),
            (gain, (g * xhat).sum(axis=0, keepdims=True)),
            (bias, g.sum(axis=0, keepdims=True)),
        ]

    return _record(out, (a, gain, bias), back)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh form."""
    x = a.data
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x * (1.0 + t))

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        return [(a, g * dx)]

    return _record(out, (a,), back)


def cross_entropy_logits(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax of the target class per row; 1x1 output."""
    t = np.asarray(targets, dtype=np.int64).ravel()
    if t.size != logits.rows:
        raise ShapeError(
            f"cross_entropy: {t.size} targets for {logits.rows} logit rows"
        )
    if t.size and (t.min() < 0 or t.max() >= logits.cols):
        raise IndexError(f"target class out of range for {logits.cols} classes")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(t.size), t]
    n = t.size
    out = Tensor(np.array([[(lse - picked).mean()]]))

    def back(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), t] -= 1.0
        return [(logits, p * (g[0, 0] / n))]

    return _record(out, (logits, ), back)


# ---------------------------------------------------------------------------
# gradient oracle


def finite_diff_grad(f: Callable[[Tensor], float | Tensor], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Independent of the tape machinery; used as the ground truth the autodiff
    path is checked against. ``f`` must be deterministic.
    """
    if h <= 0:
        raise ValueError("finite_diff_grad: h must be positive")

    def evaluate(arr) -> float:
        r = f(Tensor(arr))
        return r.item() if isinstance(r, Tensor) else float(r)

    base = x.data
    g = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            hi = base.copy()
            lo = base.copy()
            hi[i, j] += h
            lo[i, j] -= h
            g[i, j] = (evaluate(hi) - evaluate(lo)) / (2.0 * h)
    return Tensor(g)
