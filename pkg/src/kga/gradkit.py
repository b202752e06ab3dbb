"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` records the primitive that produced it together with a
closure that pushes an upstream gradient back to its inputs.  Calling
:func:`backward` on a scalar output walks the recorded graph in reverse
topological order.  The module also carries the Adam optimizer with the
inverse-square-root warmup schedule used for every training loop in the
package.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

DTYPE = np.float64


class GraphError(ValueError):
    """Raised for ill-formed graphs (shape mismatches, bad seeds)."""


class ShapeError(GraphError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_state = {"grad": True, "check_finite": True}


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording backward closures (inference only)."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    # numpy defers to the reflected Tensor operators instead of broadcasting over objects
    __array_ufunc__ = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _node(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if _state["check_finite"] and not np.isfinite(data).all():
        names = ", ".join(p.name or p.op for p in parents)
        raise NonFiniteError(f"{op}: non-finite output (inputs: {names})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: incompatible shapes {a.shape} ({a.name or a.op}) and {b.shape} ({b.name or b.op})"
        ) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node("sub", a.data - b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node("neg", -a.data, (a,), lambda g: _accum(a, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node("mul", a.data * b.data, (a, b), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _node("tanh", y, (a,), lambda g: _accum(a, g * (1.0 - y * y)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node("sigmoid", y, (a,), lambda g: _accum(a, g * y * (1.0 - y)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    m = a.data > 0
    return _node("relu", a.data * m, (a,), lambda g: _accum(a, g * m))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _node("exp", y, (a,), lambda g: _accum(a, g * y))


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NonFiniteError(f"log: non-positive input ({a.name or a.op})")
    return _node("log", np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def absolute(a) -> Tensor:
    """|a| with subgradient sign(a), sign(0) = 0."""
    a = as_tensor(a)
    s = np.sign(a.data)
    return _node("abs", np.abs(a.data), (a,), lambda g: _accum(a, g * s))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _node("softmax", y, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    """Fused log(softmax(a)); numerically safe for large logits."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        p = np.exp(y)
        _accum(a, g - p * g.sum(axis=axis, keepdims=True))

    return _node("log_softmax", y, (a,), bw)


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g, a.shape))

    return _node("sum", np.asarray(y, dtype=DTYPE), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    y = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _node("mean", np.asarray(y, dtype=DTYPE), (a,), bw)


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: cannot multiply {a.shape} ({a.name or a.op}) by {b.shape} ({b.name or b.op})"
        )
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims {a.shape} vs {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _node("matmul", y, (a, b), bw)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    nd = parts[0].ndim
    ax = axis % nd
    for p in parts[1:]:
        if p.ndim != nd or any(p.shape[i] != parts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: {parts[0].shape} vs {p.shape} along axis {axis}")
    y = np.concatenate([p.data for p in parts], axis=ax)
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                sl = [slice(None)] * nd
                sl[ax] = slice(lo, hi)
                _accum(p, g[tuple(sl)])

    return _node("concat", y, parts, bw)


def take_rows(table, ids) -> Tensor:
    """Row lookup: ``table[ids]`` for an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"take_rows: id out of range for table with {table.shape[0]} rows")
    y = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accum(table, gt)

    return _node("take_rows", y, (table,), bw)


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in items)


def index(a, idx) -> Tensor:
    """Basic or advanced numpy indexing; gradients scatter back with add."""
    a = as_tensor(a)
    y = a.data[idx]

    basic = _is_basic(idx)

    def bw(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[idx] += g
        else:
            np.add.at(ga, idx, g)
        _accum(a, ga)

    return _node("index", np.array(y, dtype=DTYPE), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from None
    return _node("reshape", y, (a,), lambda g: _accum(a, g.reshape(a.shape)))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    y = np.swapaxes(a.data, ax1, ax2)
    return _node("swapaxes", y, (a,), lambda g: _accum(a, np.swapaxes(g, ax1, ax2)))


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    expanded = [reshape(p, p.shape[:axis % (p.ndim + 1)] + (1,) + p.shape[axis % (p.ndim + 1):]) for p in parts]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------- graph API


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(output: Tensor, seed: np.ndarray | None = None,
             params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode sweep from ``output``.

    Returns gradients for ``params`` (zeros for leaves the output does not
    reach).  Without an explicit ``seed`` the output must be scalar.
    """
    if seed is None:
        if output.data.size != 1:
            raise GraphError(f"backward: output has shape {output.shape}; pass a seed for non-scalar outputs")
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(seed, dtype=DTYPE)
        if seed.shape != output.shape:
            raise ShapeError(f"backward: seed shape {seed.shape} != output shape {output.shape}")
    params = params or {}
    for t in params.values():
        t.grad = None
    if output.requires_grad:
        order = _topo(output)
        for node in order:
            node.grad = None
        output.grad = np.array(seed, dtype=DTYPE)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}


@dataclass(frozen=True)
class ComputeGraph:
    """A traced function of parameter leaves and bound inputs.

    ``fn(params, **inputs)`` builds the graph from :class:`Tensor` params and
    returns either a Tensor or a mapping of named Tensors.
    """

    fn: Callable[..., Tensor | Mapping[str, Tensor]]
    params: Mapping[str, np.ndarray] = field(default_factory=dict)

    def leaves(self) -> dict[str, Tensor]:
        return {k: param(v, name=k) for k, v in self.params.items()}


def forward(graph: ComputeGraph, inputs: Mapping[str, object] | None = None,
            leaves: Mapping[str, Tensor] | None = None) -> dict[str, Tensor]:
    leaves = graph.leaves() if leaves is None else leaves
    out = graph.fn(leaves, **(inputs or {}))
    if isinstance(out, Tensor):
        return {"output": out}
    return dict(out)


def value_and_grad(graph: ComputeGraph, inputs: Mapping[str, object] | None = None,
                   output: str = "output") -> tuple[float, dict[str, np.ndarray]]:
    leaves = graph.leaves()
    outs = forward(graph, inputs, leaves)
    y = outs[output]
    return float(y.data), backward(y, params=leaves)


def grad_check(graph: ComputeGraph, inputs: Mapping[str, object] | None = None,
               perturbation: float = 1e-5, output: str = "output") -> float:
    """Max over parameter arrays of ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8).

    Numeric gradients use central differences.  A non-finite comparison
    reports ``inf`` rather than raising.
    """
    try:
        _, analytic = value_and_grad(graph, inputs, output)
    except (NonFiniteError, FloatingPointError):
        return math.inf

    def f(params) -> float:
        g = ComputeGraph(graph.fn, params)
        with no_grad():
            return float(forward(g, inputs)[output].data)

    worst = 0.0
    base = {k: np.array(v, dtype=DTYPE, copy=True) for k, v in graph.params.items()}
    for name, arr in base.items():
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            try:
                flat[i] = orig + perturbation
                fp = f(base)
                flat[i] = orig - perturbation
                fm = f(base)
            except (NonFiniteError, FloatingPointError):
                return math.inf
            finally:
                flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * perturbation)
        a = analytic[name]
        if not (np.isfinite(a).all() and np.isfinite(numeric).all()):
            return math.inf
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-8)
        worst = max(worst, float(np.linalg.norm(a - numeric) / denom))
    return worst


# ---------------------------------------------------------------- optimizer


def inverse_sqrt_schedule(warmup: int = 100) -> Callable[[int], float]:
    """Multiplier min(t/w, 1) * sqrt(w / max(t, w)) for step t >= 1."""

    def rate(t: int) -> float:
        return min(t / warmup, 1.0) * math.sqrt(warmup / max(t, warmup))

    return rate


def constant_schedule(t: int) -> float:
    return 1.0


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **hp) -> "OptimizerState":
        st = cls(**hp)
        st.m = {k: np.zeros_like(v) for k, v in params.items()}
        st.v = {k: np.zeros_like(v) for k, v in params.items()}
        return st


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: OptimizerState, schedule: Callable[[int], float] = constant_schedule) -> bool:
    """One Adam update in place.  Returns False (and skips) on non-finite grads."""
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeError(f"adam_step: grad {k} has shape {g.shape}, param {params[k].shape}")
        if not np.isfinite(g).all():
            state.skipped += 1
            return False
    state.step += 1
    t = state.step
    lr = state.lr * schedule(t)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t if b1 > 0 else 1.0
    c2 = 1.0 - b2 ** t if b2 > 0 else 1.0
    step_size = lr / c1
    inv_c2 = 1.0 / math.sqrt(c2)
    for k, g in grads.items():
        p = params[k]
        if state.weight_decay:
            g = g + state.weight_decay * p
        m, v = state.m[k], state.v[k]
        buf = np.empty_like(p)  # explicit buffer: 0-d ufunc results would be scalars, not arrays
        np.multiply(g, 1.0 - b1, out=buf)
        m *= b1
        m += buf
        np.multiply(g, g, out=buf)
        buf *= 1.0 - b2
        v *= b2
        v += buf
        np.sqrt(v, out=buf)
        buf *= inv_c2
        buf += state.eps
        np.divide(m, buf, out=buf)
        buf *= step_size
        p -= buf
    return True


def tree_copy(params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.array(v, dtype=DTYPE, copy=True) for k, v in params.items()}


def tree_equal(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


sum = sum_  # noqa: A001  (public alias; module code uses sum_)
