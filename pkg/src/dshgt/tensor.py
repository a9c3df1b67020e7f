"""Dense tensors with reverse-mode automatic differentiation.

Every op computes its value eagerly with numpy.  When any input requires a
gradient the result keeps references to its inputs together with a closure
computing the vector-Jacobian product; :func:`backward` orders those records
topologically (the tape) and replays them once in reverse.

Shapes must match exactly.  Broadcasting only happens through the explicit
:func:`expand` op or when an operand is a Python scalar.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

_state = {"dtype": np.float32, "grad": True, "kinks": None}


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype of newly created tensors."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _state["dtype"]:
            arr = arr.astype(_state["dtype"])
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad, name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _acc_sum(x: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
    return np.sum(x, axis=axis, dtype=np.float64, keepdims=keepdims).astype(x.dtype)


# ---------------------------------------------------------------------------
# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    if _state["kinks"] is not None:
        _state["kinks"].append(np.packbits(mask))
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        if a.data.ndim != 2:
            raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
        axes = (1, 0)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of size-1 axes up to ``shape``."""
    shape = tuple(shape)
    if a.data.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    out = np.broadcast_to(a.data, shape).copy()
    return _make(out, (a,), lambda g: (_acc_sum(g, axis=axes, keepdims=True),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(
            i != axis % len(ref) and x != y for i, (x, y) in enumerate(zip(ref, other))
        ):
            raise ShapeError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _make(a.data[index].copy(), (a,), vjp)


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    if int(np.sum(sizes)) != a.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover axis of length {a.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        out.append(slice_axis(a, start, start + s, axis))
        start += s
    return out


# ---------------------------------------------------------------------------
# reductions and linear algebra

def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape
    out = _acc_sum(a.data, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), vjp)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError(f"mean over empty axis of shape {a.shape}")
    return scale(sum(a, axis), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape[axis] == 0:
        raise ShapeError(f"softmax over empty axis of shape {a.shape}")
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / _acc_sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - _acc_sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (a,), vjp)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape[axis] == 0:
        raise ShapeError(f"softmax over empty axis of shape {a.shape}")
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(_acc_sum(np.exp(x), axis=axis, keepdims=True))
    out = x - lse
    sm = np.exp(out)

    def vjp(g):
        return (g - sm * _acc_sum(g, axis=axis, keepdims=True),)

    return _make(out, (a,), vjp)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or outside training."""
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / a.data.dtype.type(1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


def embedding(weight: Tensor, idx) -> Tensor:
    """Row gather ``weight[idx]``; gradients scatter-add back."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = weight.shape

    def vjp(g):
        flat = g.reshape((-1,) + shape[1:])
        return (scatter_sum(idx.reshape(-1), flat, shape[0]),)

    return _make(weight.data[idx], (weight,), vjp)


gather = embedding


def cross_entropy(logits: Tensor, target, reduction: str = "mean") -> Tensor:
    """Softmax cross entropy over the last axis of ``(N, C)`` logits.

    ``target`` holds class indices of shape ``(N,)`` or a distribution of
    shape ``(N, C)``.
    """
    if logits.data.ndim == 1:
        logits = reshape(logits, (1, -1))
    n, c = logits.shape
    logp = log_softmax(logits, axis=1)
    target = np.asarray(target)
    if target.ndim == 0:
        target = target.reshape(1)
    if target.ndim == 1:
        if target.shape[0] != n:
            raise ShapeError(f"cross_entropy: {n} rows but {target.shape[0]} targets")
        onehot = np.zeros((n, c), dtype=logp.data.dtype)
        onehot[np.arange(n), target.astype(np.int64)] = 1
    else:
        if target.shape != (n, c):
            raise ShapeError(f"cross_entropy: logits {(n, c)} vs distribution {target.shape}")
        onehot = target.astype(logp.data.dtype)
    per_row = neg(sum(mul(logp, Tensor(onehot)), axis=1))
    if reduction == "none":
        return per_row
    if reduction == "sum":
        return sum(per_row)
    return mean(per_row)


# ---------------------------------------------------------------------------
# graph ops

def scatter_sum(ids: np.ndarray, values: np.ndarray, n: int, order: np.ndarray | None = None) -> np.ndarray:
    """``out[k] = sum(values[ids == k])`` accumulated in float64, in row order."""
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    if len(ids) == 0:
        return out.astype(values.dtype)
    if order is None:
        order = np.argsort(ids, kind="stable")
    sid = ids[order]
    starts = np.flatnonzero(np.concatenate([[True], sid[1:] != sid[:-1]]))
    out[sid[starts]] = np.add.reduceat(values[order].astype(np.float64), starts, axis=0)
    return out.astype(values.dtype)


@dataclass
class Segments:
    """Grouping of ``M`` rows into ``n`` segments (``ids[i]`` in ``[0, n)``)."""

    ids: np.ndarray
    n: int
    counts: np.ndarray = field(init=False)
    order: np.ndarray = field(init=False, repr=False)
    starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.counts = np.bincount(self.ids, minlength=self.n)
        self.order = np.argsort(self.ids, kind="stable")
        sid = self.ids[self.order]
        self.starts = np.flatnonzero(np.concatenate([[True], sid[1:] != sid[:-1]])) if len(sid) else sid

    def sum(self, values: np.ndarray) -> np.ndarray:
        return scatter_sum(self.ids, values, self.n, self.order)

    def max(self, values: np.ndarray) -> np.ndarray:
        out = np.full((self.n,) + values.shape[1:], -np.inf, dtype=values.dtype)
        if len(self.ids):
            sid = self.ids[self.order]
            out[sid[self.starts]] = np.maximum.reduceat(values[self.order], self.starts, axis=0)
        return out


def segment_sum(x: Tensor, seg: Segments) -> Tensor:
    ids = seg.ids
    return _make(seg.sum(x.data), (x,), lambda g: (g[ids],))


def segment_mean(x: Tensor, seg: Segments) -> Tensor:
    if np.any(seg.counts == 0):
        raise ShapeError("segment_mean: empty segment")
    inv = (1.0 / seg.counts).astype(x.data.dtype).reshape((-1,) + (1,) * (x.data.ndim - 1))
    total = segment_sum(x, seg)
    return mul(total, Tensor(np.broadcast_to(inv, total.shape)))


def segment_softmax(x: Tensor, seg: Segments) -> Tensor:
    """Softmax over the rows of each segment, independently per column."""
    ids = seg.ids
    v = x.data
    e = np.exp(v - seg.max(v)[ids])
    denom = np.zeros((seg.n,) + v.shape[1:], dtype=np.float64)
    denom[:] = seg.sum(e.astype(np.float64))
    out = (e / denom[ids]).astype(v.dtype)

    def vjp(g):
        dot = seg.sum((g * out).astype(np.float64))
        return (out * (g - dot[ids].astype(v.dtype)),)

    return _make(out, (x,), vjp)


def typed_matmul(x: Tensor, weight: Tensor, types) -> Tensor:
    """Row-wise matmul with a weight chosen per row.

    ``x`` has shape ``(N, *B, k)``, ``weight`` has shape ``(T, *B, k, l)`` and
    row ``i`` is multiplied by ``weight[types[i]]``; ``B`` is either empty or a
    single head axis.
    """
    types = np.asarray(types, dtype=np.int64)
    xd, wd = x.data, weight.data
    if xd.ndim not in (2, 3) or wd.ndim != xd.ndim + 1 or xd.shape[1:] != wd.shape[1:-1]:
        raise ShapeError(f"typed_matmul: shape mismatch {x.shape} vs {weight.shape}")
    if types.shape != (xd.shape[0],):
        raise ShapeError(f"typed_matmul: {xd.shape[0]} rows but {types.shape} type ids")
    groups = [(t, np.flatnonzero(types == t)) for t in np.unique(types)]
    out = np.zeros(xd.shape[:-1] + (wd.shape[-1],), dtype=xd.dtype)

    def mm(a, w):
        if a.ndim == 2:
            return a @ w
        return np.matmul(a.transpose(1, 0, 2), w).transpose(1, 0, 2)

    for t, rows in groups:
        out[rows] = mm(xd[rows], wd[t])

    def vjp(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        for t, rows in groups:
            gr = g[rows]
            if xd.ndim == 2:
                gx[rows] = gr @ wd[t].T
                gw[t] = xd[rows].T @ gr
            else:
                gx[rows] = mm(gr, wd[t].transpose(0, 2, 1))
                gw[t] = np.matmul(xd[rows].transpose(1, 2, 0), gr.transpose(1, 0, 2))
        return gx, gw

    return _make(out, (x, weight), vjp)


# ---------------------------------------------------------------------------
# backward pass

@dataclass
class Tape:
    """Ops reachable from a loss, in topological (recording) order."""

    ops: list[Tensor]

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> Tape:
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this graph; rebuild it to differentiate again")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor that requires grad (empty tape)")
    tape = Tape.from_loss(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.ops):
        g = grads.pop(id(node), None)
        if node._vjp is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in tape.ops:
        node._consumed = True
        if node._vjp is not None:
            node._parents = ()
            node._vjp = None
    return tape


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class InputReport:
    name: str
    checked: int
    max_rel_error: float
    worst_index: int | None
    excluded: list[int]
    direction_errors: list[float] = field(default_factory=list)


@dataclass
class GradCheckReport:
    inputs: list[InputReport]
    tol: float

    @property
    def max_rel_error(self) -> float:
        errs = [r.max_rel_error for r in self.inputs] + [
            e for r in self.inputs for e in r.direction_errors
        ]
        return max(errs, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def summary(self) -> str:
        lines = []
        for r in self.inputs:
            d = max(r.direction_errors, default=0.0)
            lines.append(
                f"{r.name}: checked={r.checked} max_rel={r.max_rel_error:.3e} "
                f"dir_max={d:.3e} excluded={len(r.excluded)}"
            )
        lines.append(f"max_rel_error={self.max_rel_error:.3e} tol={self.tol:g} "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def rel_error(a: float, n: float, floor: float = 1e-2) -> float:
    """|a - n| scaled by the larger magnitude, never by less than ``floor``."""
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence,
    tol: float = 1e-3,
    eps: float = 1e-3,
    coords: dict[int, Iterable[int]] | None = None,
    n_directions: int = 0,
    seed: int = 0,
    dtype=np.float64,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f(*inputs)`` with central differences.

    ``coords`` optionally restricts the coordinate sweep per input position;
    ``n_directions`` adds random directional-derivative probes over every
    input.  Coordinates where a ReLU changes activation between the two
    probes are excluded and listed in the report.
    """
    rng = np.random.default_rng(seed)
    with precision(dtype):
        xs = [Tensor(np.array(_as_tensor(x).data, dtype=dtype), requires_grad=True) for x in inputs]
        loss = f(*xs)
        backward(loss)
        analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in xs]

        def probe(i: int, delta: np.ndarray):
            base = xs[i].data
            results = []
            for sign in (1.0, -1.0):
                moved = [Tensor(x.data) for x in xs]
                moved[i] = Tensor(base + sign * delta)
                _state["kinks"] = []
                try:
                    with no_grad():
                        val = f(*moved).item()
                    results.append((val, [k.tobytes() for k in _state["kinks"]]))
                finally:
                    _state["kinks"] = None
            (vp, kp), (vm, km) = results
            return (vp - vm) / (2 * eps), kp != km

        reports = []
        for i, x in enumerate(xs):
            flat_idx = range(x.size) if coords is None or i not in coords else coords[i]
            worst, worst_idx, excluded, checked = 0.0, None, [], 0
            for j in flat_idx:
                delta = np.zeros(x.size, dtype=dtype)
                delta[j] = eps
                num, kinked = probe(i, delta.reshape(x.shape))
                if kinked:
                    excluded.append(int(j))
                    continue
                checked += 1
                err = rel_error(float(analytic[i].reshape(-1)[j]), num)
                if err > worst:
                    worst, worst_idx = err, int(j)
            dir_errs = []
            for _ in range(n_directions):
                v = rng.standard_normal(x.shape)
                v /= np.linalg.norm(v) or 1.0
                num, kinked = probe(i, eps * v)
                if kinked:
                    continue
                dir_errs.append(rel_error(float(np.sum(analytic[i] * v)), num))
            name = names[i] if names else (getattr(inputs[i], "name", None) or f"input{i}")
            reports.append(InputReport(name, checked, worst, worst_idx, excluded, dir_errs))
    return GradCheckReport(reports, tol)
