"""Dense float64 tensors with a define-by-run reverse-mode tape and Adam.

Every differentiable op records a node on the innermost active :class:`Tape`
(``with Tape() as tape: ...``). Outside a tape, ops run eagerly without
recording, which is what evaluation uses. Binary ops never broadcast; callers
materialize repeats with :func:`expand_cols`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import itertools

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Adam",
    "AdamState",
    "ContractError",
    "DimensionError",
    "EmptyReductionError",
    "NumericError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "clip",
    "concat",
    "div",
    "elementwise",
    "exp",
    "expand_cols",
    "gather",
    "log",
    "matmul",
    "mul",
    "neg",
    "reduce",
    "relu",
    "reshape",
    "rowdot",
    "scale",
    "scale_rows",
    "segment_softmax",
    "segment_sum",
    "sigmoid",
    "slice_cols",
    "softmax",
    "sub",
    "tanh",
    "transpose",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""


class ContractError(ValueError):
    """A caller violated an operation precondition."""


class EmptyReductionError(ValueError):
    """Reduction over an axis of length zero."""


class Tensor:
    """A float64 array plus autograd bookkeeping.

    ``values`` is stored as an ndarray; its row-major flattening is the
    canonical flat layout. ``grad`` is allocated on the first backward pass
    that reaches the tensor.
    """

    __slots__ = ("values", "requires_grad", "grad", "tape_id", "_tape", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.array(values, dtype=np.float64)
        if any(s < 1 for s in arr.shape):
            raise DimensionError(f"tensor dimensions must be >= 1, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape_id: int | None = None
        self._tape: int | None = None  # serial of the recording tape, not the tape itself
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal fast path: arr is already a fresh float64 array
        t = cls.__new__(cls)
        t.values = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.tape_id = None
        t._tape = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __len__(self) -> int:
        return self.values.shape[0]

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __truediv__(self, other: "Tensor") -> "Tensor":
        return div(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


@dataclass
class TapeNode:
    kind: str
    inputs: tuple[int, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    leaf: Tensor | None = None


_ACTIVE: list["Tape"] = []


class Tape:
    """Append-only record of the ops executed while the tape is active.

    Leaf tensors that require grad get their own ``leaf`` node the first time
    they are used, so every input id of node ``k`` is smaller than ``k``.
    """

    _serials = itertools.count()

    def __init__(self) -> None:
        # tensors keep only this serial; holding the tape object would form
        # reference cycles that keep whole batches alive until a full GC pass
        self.serial = next(Tape._serials)
        self.nodes: list[TapeNode] = []
        self._leaf_ids: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def _id_of(self, t: Tensor) -> int | None:
        if t._tape == self.serial:
            return t.tape_id
        if not t.requires_grad:
            return None
        key = id(t)
        idx = self._leaf_ids.get(key)
        if idx is None or self.nodes[idx].leaf is not t:
            idx = len(self.nodes)
            self.nodes.append(TapeNode("leaf", (), None, leaf=t))
            self._leaf_ids[key] = idx
        return idx

    def record(self, kind: str, inputs: Sequence[Tensor], out: Tensor, fn) -> None:
        ids = tuple(-1 if (i := self._id_of(t)) is None else i for t in inputs)
        out.tape_id = len(self.nodes)
        out._tape = self.serial
        self.nodes.append(TapeNode(kind, ids, fn))


def _current_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _result(values: np.ndarray, kind: str, inputs: Sequence[Tensor], fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(values, needs)
    if needs:
        tape = _current_tape()
        if tape is not None:
            tape.record(kind, inputs, out, fn)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite input")


def _scatter_rows(idx: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """out[k] = sum of rows[j] with idx[j] == k, for k < n.

    Much faster than ``np.add.at``. The 2-D case multiplies by an (n, len(idx))
    0/1 matrix in CSC form, which accumulates rows in index order.
    """
    if rows.ndim == 1:
        return np.bincount(idx, weights=rows, minlength=n)
    m = len(idx)
    onehot = sp.csc_matrix((np.ones(m), idx, np.arange(m + 1)), shape=(n, m))
    flat = np.asarray(onehot @ rows.reshape(m, -1))
    return flat.reshape((n,) + rows.shape[1:])


def _segment_max(v: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    peak = np.full(n, -np.inf)
    if len(v):
        order = np.argsort(seg, kind="stable")
        s_sorted = seg[order]
        starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
        peak[s_sorted[starts]] = np.maximum.reduceat(v[order], starts)
    return peak


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values

    def fn(g):
        return g @ bv.T, av.T @ g

    return _result(av @ bv, "matmul", (a, b), fn)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return _result(np.ascontiguousarray(a.values.T), "transpose", (a,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result(a.values + b.values, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result(a.values - b.values, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    ga, gb = a.requires_grad, b.requires_grad
    return _result(av * bv, "mul", (a, b),
                   lambda g: (g * bv if ga else None, g * av if gb else None))


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner product of two (n, d) matrices, giving a length-n vector."""
    _same_shape("rowdot", a, b)
    if a.values.ndim != 2:
        raise DimensionError(f"rowdot: expected matrices, got shape {a.shape}")
    av, bv = a.values, b.values
    out = np.einsum("ij,ij->i", av, bv)
    return _result(out, "rowdot", (a, b), lambda g: (g[:, None] * bv, g[:, None] * av))


def scale_rows(w: Tensor, x: Tensor) -> Tensor:
    """Multiply row k of an (n, d) matrix by w[k]."""
    if w.values.ndim != 1 or x.values.ndim != 2 or w.shape[0] != x.shape[0]:
        raise DimensionError(f"scale_rows: weights {w.shape} do not match rows of {x.shape}")
    wv, xv = w.values, x.values
    return _result(wv[:, None] * xv, "scale_rows", (w, x),
                   lambda g: (np.einsum("ij,ij->i", g, xv), g * wv[:, None]))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    av, bv = a.values, b.values
    out = av / bv
    return _result(out, "div", (a, b), lambda g: (g / bv, -g * out / bv))


def neg(a: Tensor) -> Tensor:
    return _result(-a.values, "neg", (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    c = float(c)
    return _result(a.values * c, "scale", (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _result(np.where(mask, a.values, 0.0), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.values
    if np.any(x <= 0):
        raise NumericError("log: non-positive input")
    return _result(np.log(x), "log", (a,), lambda g: (g / x,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; the gradient is zero where clamping was active."""
    x = a.values
    inside = (x >= lo) & (x <= hi)
    return _result(np.clip(x, lo, hi), "clip", (a,), lambda g: (g * inside,))


_UNARY = {"tanh": tanh, "relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch a pointwise op by name (``add``, ``mul``, ``tanh``, ...)."""
    if op in _BINARY:
        if b is None:
            raise ContractError(f"elementwise {op!r} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"elementwise {op!r} takes one operand")
        return _UNARY[op](a)
    raise ContractError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# shape manipulation


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise ContractError("concat: nothing to concatenate")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.values.ndim != parts[0].values.ndim or p.shape[:-1] != lead:
            raise DimensionError(
                f"concat: leading dimensions differ: {[q.shape for q in parts]}"
            )
    widths = [p.shape[-1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def fn(g):
        return tuple(g[..., bounds[k] : bounds[k + 1]] for k in range(len(parts)))

    return _result(np.concatenate([p.values for p in parts], axis=-1), "concat", parts, fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.values.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"slice_cols: bad range [{start}, {stop}) for shape {x.shape}")
    shape = x.shape

    def fn(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _result(x.values[:, start:stop].copy(), "slice_cols", (x,), fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    try:
        out = x.values.reshape(shape).copy()
    except ValueError as exc:
        raise DimensionError(f"reshape: {old} -> {shape}") from exc
    return _result(out, "reshape", (x,), lambda g: (g.reshape(old),))


def expand_cols(x: Tensor, d: int) -> Tensor:
    """Repeat a length-n vector into an (n, d) matrix, column by column."""
    if x.values.ndim != 1:
        raise DimensionError(f"expand_cols: expected a vector, got shape {x.shape}")
    out = np.repeat(x.values[:, None], d, axis=1)
    return _result(out, "expand_cols", (x,), lambda g: (g.sum(axis=1),))


def gather(table: Tensor, indices) -> Tensor:
    """Rows of ``table`` in index order; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = int(idx[(idx < 0) | (idx >= n)][0])
        raise IndexError(f"gather: index {bad} out of range for table with {n} rows")
    shape = table.shape

    def fn(g):
        return (_scatter_rows(idx, g, shape[0]),)

    return _result(table.values[idx], "gather", (table,), fn)


# ---------------------------------------------------------------------------
# reductions


def reduce(op: str, x: Tensor, axis: int | None = None) -> Tensor:
    """``sum`` or ``mean`` over one axis, or over everything when axis is None."""
    if op not in ("sum", "mean"):
        raise ContractError(f"reduce: unknown op {op!r}")
    shape = x.shape
    if axis is None:
        n = x.values.size
    else:
        if not -len(shape) <= axis < len(shape):
            raise DimensionError(f"reduce: axis {axis} invalid for shape {shape}")
        axis = axis % len(shape)
        n = shape[axis]
    if n == 0:
        raise EmptyReductionError(f"reduce {op}: empty axis")
    out = x.values.sum(axis=axis)
    factor = 1.0
    if op == "mean":
        factor = 1.0 / n
        out = out * factor

    def fn(g):
        g = np.asarray(g) * factor
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), f"reduce_{op}", (x,), fn)


def segment_sum(x: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Sum rows of ``x`` that share a segment id; empty segments give zero rows."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != x.shape[:1]:
        raise DimensionError(f"segment_sum: {seg.shape[0]} ids for {x.shape[0]} rows")
    out = _scatter_rows(seg, x.values, n_segments)
    return _result(out, "segment_sum", (x,), lambda g: (g[seg],))


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by max-subtraction."""
    v = x.values
    _check_finite("softmax", v)
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, "softmax", (x,), fn)


def segment_softmax(logits: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Softmax of a flat logit vector within each segment."""
    v = logits.values
    if v.ndim != 1:
        raise DimensionError(f"segment_softmax: expected a vector, got shape {v.shape}")
    _check_finite("segment_softmax", v)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != v.shape:
        raise DimensionError(f"segment_softmax: {seg.shape[0]} ids for {v.shape[0]} logits")
    peak = _segment_max(v, seg, n_segments)
    z = np.exp(v - peak[seg])
    tot = np.bincount(seg, weights=z, minlength=n_segments)
    out = z / tot[seg]

    def fn(g):
        dot = np.bincount(seg, weights=g * out, minlength=n_segments)
        return (out * (g - dot[seg]),)

    return _result(out, "segment_softmax", (logits,), fn)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor, tape: Tape, params: Sequence[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Tensors in ``params`` that the loss does not reach get a zero gradient.
    Gradients accumulate, so call ``zero_grad`` between steps.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.values)
    if loss._tape != tape.serial:
        if loss.requires_grad and tape._id_of(loss) is not None:
            # loss is itself a leaf
            loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.values)
            return
        raise ContractError("backward: loss was not recorded on this tape")

    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.tape_id] = np.ones_like(loss.values)
    for k in range(loss.tape_id, -1, -1):
        g = grads[k]
        if g is None:
            continue
        grads[k] = None
        node = tape.nodes[k]
        if node.leaf is not None:
            leaf = node.leaf
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
            continue
        for src, gi in zip(node.inputs, node.backward(g)):
            if src < 0 or gi is None:
                continue
            grads[src] = gi if grads[src] is None else grads[src] + gi


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled: bool = False
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    With ``decoupled=False`` the L2 term ``weight_decay * theta`` is added to
    the gradient before the moment update; with ``decoupled=True`` the
    parameter is shrunk by ``lr * weight_decay * theta`` instead.
    """
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.values) for p in params]
        state.second_moment = [np.zeros_like(p.values) for p in params]
    if len(state.first_moment) != len(params):
        raise ContractError("adam_step: optimizer state does not match the parameter list")
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for parameter {p.name or '?'}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for k, (p, g) in enumerate(zip(params, grads)):
        m, v = state.first_moment[k], state.second_moment[k]
        if m.shape != p.values.shape:
            raise ContractError(f"adam_step: moment shape mismatch for {p.name or '?'}")
        if state.weight_decay:
            if state.decoupled:
                p.values -= state.lr * state.weight_decay * p.values
            else:
                g = g + state.weight_decay * p.values
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.values -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


class Adam:
    """Convenience wrapper holding a parameter list and its :class:`AdamState`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0,
                 decoupled: bool = False):
        ids = [id(p) for p in params]
        if len(set(ids)) != len(ids):
            raise ContractError("Adam: a parameter was registered twice")
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                               weight_decay=weight_decay, decoupled=decoupled)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.values) for p in self.params]
        adam_step(self.params, grads, self.state)
