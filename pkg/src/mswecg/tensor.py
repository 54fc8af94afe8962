"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is 64-bit and row-major.  Each differentiable operation records
itself on the tensor it produces; ``backward`` traces the records reachable
from a scalar loss into a :class:`Graph` and replays them in reverse
topological order, accumulating gradients into ``.grad`` buffers.

Tensors are treated as immutable once created, grad buffers excepted (the
optimizer mutates parameter data in place, but only between passes).  A graph
and its tensors belong to one thread for the duration of a forward/backward
pass; distinct graphs may run on distinct threads.
"""

from __future__ import annotations

import contextlib
import contextvars
import math

import numpy as np
from scipy.special import erf, expit

from .errors import DimensionError, GraphError

__all__ = [
    "Tensor",
    "Graph",
    "MacCounter",
    "apply_op",
    "backward",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "linear",
    "concat",
    "split",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "roll",
    "clip",
    "log",
    "softmax_lastdim",
    "layernorm",
    "gelu",
    "sigmoid",
    "dropout",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# `sum` below is shadowed by the reduction op of the same name.
_py_sum = sum


class Tensor:
    """A dense float64 array plus the bookkeeping reverse-mode AD needs."""

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op: OpRecord | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; scalars and arrays are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class OpRecord:
    """One recorded operation: inputs, output, and its backward rule."""

    __slots__ = ("name", "inputs", "output", "backward_fn", "consumed")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn
        self.consumed = False


def apply_op(name, inputs, out_data, backward_fn) -> Tensor:
    """Build the output tensor of a differentiable op.

    ``backward_fn(g)`` receives the output gradient and must return one
    gradient array (or None) per input, in order.  This is the extension
    point for ops with bespoke backward rules defined outside this module.
    """
    out = Tensor(out_data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.op = OpRecord(name, inputs, out, backward_fn)
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Graph:
    """The ops reachable from a root tensor, in topological order.

    ``ops[i]``'s inputs are all produced by ops earlier in the list (or by
    leaves).  A graph may be run backward exactly once.
    """

    def __init__(self, ops):
        self.ops: list[OpRecord] = list(ops)

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        # Iterative postorder DFS.  Records are marked seen when expanded,
        # not when pushed, so shared subgraphs keep their producers ahead of
        # every consumer.
        ops: list[OpRecord] = []
        seen: set[int] = set()
        stack: list[tuple[OpRecord, bool]] = []
        if root.op is not None:
            stack.append((root.op, False))
        while stack:
            rec, expanded = stack.pop()
            if expanded:
                ops.append(rec)
                continue
            if id(rec) in seen:
                continue
            seen.add(id(rec))
            stack.append((rec, True))
            for t in rec.inputs:
                o = t.op
                if o is not None and id(o) not in seen:
                    stack.append((o, False))
        return cls(ops)

    def __len__(self):
        return len(self.ops)


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Populate ``.grad`` for every tensor the scalar loss depends on.

    Raises if the loss is not scalar, is detached from any recorded op, or
    if the graph has already been run backward (no silent accumulation
    across passes).
    """
    if loss.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    if loss.op is None:
        raise GraphError("loss is detached from any recorded graph")
    g = Graph.trace(loss) if graph is None else graph
    if any(rec.consumed for rec in g.ops):
        raise GraphError("backward was already run on this graph")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(g.ops):
        gout = rec.output.grad
        rec.consumed = True
        if gout is None:
            continue
        grads = rec.backward_fn(gout)
        for t, gi in zip(rec.inputs, grads):
            if gi is None:
                continue
            t.grad = gi if t.grad is None else t.grad + gi


# ---------------------------------------------------------------------------
# MAC accounting hook


_active_counter: contextvars.ContextVar["MacCounter | None"] = contextvars.ContextVar(
    "mswecg_mac_counter", default=None
)


class MacCounter:
    """Tallies the scalar multiplies of every matmul executed while active.

    Counts are exact Python integers (no overflow) and grouped by a caller
    supplied phase label.  The counter is pass-local: it only sees matmuls
    run in the context (and thread) that activated it.
    """

    def __init__(self):
        self.phases: dict[str, int] = {}
        self._label = "untagged"

    def _add(self, macs: int) -> None:
        self.phases[self._label] = self.phases.get(self._label, 0) + int(macs)

    @property
    def total(self) -> int:
        return _py_sum(self.phases.values())

    @contextlib.contextmanager
    def phase(self, label: str):
        prev, self._label = self._label, label
        try:
            yield self
        finally:
            self._label = prev

    @contextlib.contextmanager
    def active(self):
        token = _active_counter.set(self)
        try:
            yield self
        finally:
            _active_counter.reset(token)


# ---------------------------------------------------------------------------
# Gradient helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduction gradient back to the pre-reduction shape."""
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        kd = list(g.shape)
        for a in sorted(axes):
            kd.insert(a, 1)
        g = g.reshape(kd)
    return np.broadcast_to(g, shape).copy()


# ---------------------------------------------------------------------------
# Elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def fn(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return apply_op("add", (a, b), out, fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def fn(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return apply_op("sub", (a, b), out, fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def fn(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return apply_op("mul", (a, b), out, fn)


def scale(x, s: float) -> Tensor:
    x = _as_tensor(x)
    s = float(s)

    def fn(g):
        return (g * s if x.requires_grad else None,)

    return apply_op("scale", (x,), x.data * s, fn)


def matmul(a, b) -> Tensor:
    """Standard matrix product; leading dims are stacked numpy-style.

    Backward: da = g @ b^T, db = a^T @ g (summed over broadcast stacking).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-D or stacked operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    counter = _active_counter.get()
    if counter is not None:
        m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
        stacked = math.prod(out.shape[:-2])
        counter._add(stacked * m * k * n)

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return apply_op("matmul", (a, b), out, fn)


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat needs at least one tensor")
    axis = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim:
            raise DimensionError(f"concat rank mismatch: {ts[0].shape} vs {t.shape}")
        for ax, (s0, s1) in enumerate(zip(ts[0].shape, t.shape)):
            if ax != axis and s0 != s1:
                raise DimensionError(f"concat shapes differ off axis {axis}: {ts[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def fn(g):
        pieces = np.split(g, bounds, axis=axis)
        return tuple(p if t.requires_grad else None for t, p in zip(ts, pieces))

    return apply_op("concat", ts, out, fn)


def split(x, sizes, axis: int = 0) -> list[Tensor]:
    """Split along an axis into chunks of the given sizes (inverse of concat)."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    if _py_sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split sizes {tuple(sizes)} do not cover axis {axis} of {x.shape}")
    outs = []
    start = 0
    for sz in sizes:
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(start, start + sz)
        sl = tuple(sl)
        start += sz

        def fn(g, sl=sl):
            if not x.requires_grad:
                return (None,)
            gx = np.zeros_like(x.data)
            gx[sl] = g
            return (gx,)

        outs.append(apply_op("split", (x,), x.data[sl].copy(), fn))
    return outs


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if not x.requires_grad:
            return (None,)
        return (_expand_reduced(g, x.data.shape, axis, keepdims),)

    return apply_op("sum", (x,), out, fn)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else math.prod(
        x.data.shape[a] for a in ((axis,) if isinstance(axis, int) else tuple(axis))
    )

    def fn(g):
        if not x.requires_grad:
            return (None,)
        return (_expand_reduced(g, x.data.shape, axis, keepdims) / count,)

    return apply_op("mean", (x,), out, fn)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def fn(g):
        return (g.reshape(x.data.shape) if x.requires_grad else None,)

    return apply_op("reshape", (x,), out, fn)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(a % x.ndim for a in axes)
    inv = np.argsort(axes)

    def fn(g):
        return (g.transpose(inv) if x.requires_grad else None,)

    return apply_op("transpose", (x,), x.data.transpose(axes), fn)


def roll(x, shift: int, axis: int) -> Tensor:
    """Cyclic rotation along one axis; backward rolls the other way."""
    x = _as_tensor(x)

    def fn(g):
        return (np.roll(g, -shift, axis=axis) if x.requires_grad else None,)

    return apply_op("roll", (x,), np.roll(x.data, shift, axis=axis), fn)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through unclipped entries."""
    x = _as_tensor(x)
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def fn(g):
        return (g * mask if x.requires_grad else None,)

    return apply_op("clip", (x,), out, fn)


def log(x) -> Tensor:
    x = _as_tensor(x)

    def fn(g):
        return (g / x.data if x.requires_grad else None,)

    return apply_op("log", (x,), np.log(x.data), fn)


# ---------------------------------------------------------------------------
# Nonlinearities


def softmax_lastdim(x) -> Tensor:
    """Overflow-safe softmax over the last axis (max-subtracted)."""
    x = _as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty last dim, got shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        if not x.requires_grad:
            return (None,)
        dot = (g * p).sum(axis=-1, keepdims=True)
        return ((g - dot) * p,)

    return apply_op("softmax", (x,), p, fn)


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Standardize each last-dim row to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if eps <= 0:
        raise ValueError(f"layernorm eps must be positive, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layernorm gain/bias shapes {gamma.shape}/{beta.shape} do not match width {c}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def fn(g):
        gg = gb = gx = None
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, c).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, c).sum(axis=0)
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        return gx, gg, gb

    return apply_op("layernorm", (x, gamma, beta), out, fn)


def gelu(x) -> Tensor:
    """Gaussian error linear unit, exact erf form: x * Phi(x)."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def fn(g):
        if not x.requires_grad:
            return (None,)
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return apply_op("gelu", (x,), out, fn)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    p = expit(x.data)

    def fn(g):
        return (g * p * (1.0 - p) if x.requires_grad else None,)

    return apply_op("sigmoid", (x,), p, fn)


def dropout(x, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); identity when not training.

    The generator is threaded explicitly so stochastic passes are replayable.
    """
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out = x.data * mask

    def fn(g):
        return (g * mask if x.requires_grad else None,)

    return apply_op("dropout", (x,), out, fn)
