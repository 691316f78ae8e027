"""Reverse-mode automatic differentiation over float64 numpy arrays.

Complex quantities are carried as :class:`ComplexPair` (real and imaginary
channels held as separate real tensors), so every differentiated function
is an ordinary real function of real inputs.

The graph is built on the fly by :func:`forward_op` and consumed once by
:meth:`Tensor.backward`.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NonFiniteError

# forward outputs are checked for NaN/Inf; tests rely on this being on
CHECK_FINITE = True

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording graph edges (evaluation/inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    __slots__ = ("kind", "inputs", "backward_fn", "consumed")

    def __init__(self, kind, inputs, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """Real n-d array that can take part in a computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self):
        self.grad = None

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return forward_op("add", [self, as_tensor(other)])

    def __radd__(self, other):
        return forward_op("add", [as_tensor(other), self])

    def __sub__(self, other):
        return forward_op("subtract", [self, as_tensor(other)])

    def __rsub__(self, other):
        return forward_op("subtract", [as_tensor(other), self])

    def __mul__(self, other):
        return forward_op("multiply", [self, as_tensor(other)])

    def __rmul__(self, other):
        return forward_op("multiply", [as_tensor(other), self])

    def __truediv__(self, other):
        return forward_op("divide", [self, as_tensor(other)])

    def __rtruediv__(self, other):
        return forward_op("divide", [as_tensor(other), self])

    def __matmul__(self, other):
        return forward_op("matmul", [self, as_tensor(other)])

    def __neg__(self):
        return forward_op("negate", [self])

    def __getitem__(self, index):
        return forward_op("slice", [self], index=index)

    @property
    def T(self):
        return forward_op("transpose", [self])

    def sum(self, axis=None, keepdims=False):
        return forward_op("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return forward_op("mean", [self], axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward_op("reshape", [self], shape=shape)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


# ----------------------------------------------------------------------
# operation table: kind -> (forward(values, **kw) -> (out, ctx),
#                           backward(g, ctx, values, **kw) -> grads)

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def _add_fwd(v, **_):
    _check_broadcast("add", *v)
    return v[0] + v[1], None


def _add_bwd(g, ctx, v, **_):
    return _unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)


def _sub_fwd(v, **_):
    _check_broadcast("subtract", *v)
    return v[0] - v[1], None


def _sub_bwd(g, ctx, v, **_):
    return _unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)


def _mul_fwd(v, **_):
    _check_broadcast("multiply", *v)
    return v[0] * v[1], None


def _mul_bwd(g, ctx, v, needs=(True, True), **_):
    return (_unbroadcast(g * v[1], v[0].shape) if needs[0] else None,
            _unbroadcast(g * v[0], v[1].shape) if needs[1] else None)


def _div_fwd(v, **_):
    _check_broadcast("divide", *v)
    if np.any(v[1] == 0):
        raise DomainError("divide: zero entry in denominator")
    return v[0] / v[1], None


def _div_bwd(g, ctx, v, **_):
    a, b = v
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _neg_fwd(v, **_):
    return -v[0], None


def _neg_bwd(g, ctx, v, **_):
    return (-g,)


def _matmul_fwd(v, **_):
    a, b = v
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        return np.matmul(a, b), None
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None


def _matmul_bwd(g, ctx, v, needs=(True, True), **_):
    a, b = v
    ga = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape) if needs[0] else None
    gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape) if needs[1] else None
    return ga, gb


def _transpose_fwd(v, **_):
    if v[0].ndim < 2:
        raise DimensionError(f"transpose: need ndim >= 2, got shape {v[0].shape}")
    return np.swapaxes(v[0], -1, -2), None


def _transpose_bwd(g, ctx, v, **_):
    return (np.swapaxes(g, -1, -2),)


def _reshape_fwd(v, shape, **_):
    try:
        return v[0].reshape(shape), None
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {v[0].shape} to {shape}") from None


def _reshape_bwd(g, ctx, v, **_):
    return (g.reshape(v[0].shape),)


def _concat_fwd(v, axis=-1, **_):
    try:
        return np.concatenate(v, axis=axis), None
    except ValueError:
        shapes = [x.shape for x in v]
        raise DimensionError(f"concatenate: incompatible shapes {shapes} on axis {axis}") from None


def _concat_bwd(g, ctx, v, axis=-1, **_):
    sizes = np.cumsum([x.shape[axis] for x in v])[:-1]
    return tuple(np.split(g, sizes, axis=axis))


def _slice_fwd(v, index, **_):
    try:
        return v[0][index], None
    except IndexError as exc:
        raise DimensionError(f"slice: {exc} for shape {v[0].shape}") from None


def _slice_bwd(g, ctx, v, index, **_):
    out = np.zeros_like(v[0])
    np.add.at(out, index, g)
    return (out,)


def _take_fwd(v, indices, **_):
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= v[0].shape[0]):
        raise DimensionError(f"take: index out of range for leading dim {v[0].shape[0]}")
    return v[0][idx], None


def _take_bwd(g, ctx, v, indices, **_):
    out = np.zeros_like(v[0])
    np.add.at(out, np.asarray(indices), g)
    return (out,)


def _tanh_fwd(v, **_):
    out = np.tanh(v[0])
    return out, out


def _tanh_bwd(g, out, v, **_):
    return (g * (1.0 - out * out),)


def _sigmoid_fwd(v, **_):
    # tanh form is overflow-free for any x and costs one transcendental
    out = 0.5 * (1.0 + np.tanh(0.5 * v[0]))
    return out, out


def _sigmoid_bwd(g, out, v, **_):
    return (g * out * (1.0 - out),)


def _relu_fwd(v, **_):
    return np.maximum(v[0], 0.0), None


def _relu_bwd(g, ctx, v, **_):
    return (g * (v[0] > 0),)


def _softmax_fwd(v, axis=-1, **_):
    z = v[0] - v[0].max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return out, out


def _softmax_bwd(g, out, v, axis=-1, **_):
    return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


def _log_softmax_fwd(v, axis=-1, **_):
    z = v[0] - v[0].max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return out, out


def _log_softmax_bwd(g, out, v, axis=-1, **_):
    return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _sum_fwd(v, axis=None, keepdims=False, **_):
    return np.sum(v[0], axis=axis, keepdims=keepdims), None


def _sum_bwd(g, ctx, v, axis=None, keepdims=False, **_):
    return (np.array(_expand_reduced(g, v[0].shape, axis, keepdims)),)


def _mean_fwd(v, axis=None, keepdims=False, **_):
    return np.mean(v[0], axis=axis, keepdims=keepdims), None


def _mean_bwd(g, ctx, v, axis=None, keepdims=False, **_):
    n = v[0].size if axis is None else np.prod([v[0].shape[a] for a in np.atleast_1d(axis)])
    return (np.array(_expand_reduced(g, v[0].shape, axis, keepdims)) / n,)


def _square_fwd(v, **_):
    return v[0] * v[0], None


def _square_bwd(g, ctx, v, **_):
    return (2.0 * g * v[0],)


def _sqrt_fwd(v, **_):
    if np.any(v[0] < 0):
        raise DomainError("sqrt: negative argument")
    out = np.sqrt(v[0])
    return out, out


def _sqrt_bwd(g, out, v, **_):
    if np.any(out == 0):
        raise DomainError("sqrt: derivative undefined at 0")
    return (g / (2.0 * out),)


def _log_fwd(v, **_):
    if np.any(v[0] <= 0):
        raise DomainError("log: non-positive argument")
    return np.log(v[0]), None


def _log_bwd(g, ctx, v, **_):
    return (g / v[0],)


def _l2norm_fwd(v, axis=-1, keepdims=False, **_):
    out = np.sqrt(np.sum(v[0] * v[0], axis=axis, keepdims=True))
    return (out if keepdims else np.squeeze(out, axis=axis)), out


def _l2norm_bwd(g, norm, v, axis=-1, keepdims=False, **_):
    if np.any(norm == 0):
        raise DomainError("l2-norm: derivative undefined at the zero vector")
    if not keepdims:
        g = np.expand_dims(g, axis)
    return (g * v[0] / norm,)


_OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (_add_fwd, _add_bwd),
    "subtract": (_sub_fwd, _sub_bwd),
    "multiply": (_mul_fwd, _mul_bwd),
    "divide": (_div_fwd, _div_bwd),
    "negate": (_neg_fwd, _neg_bwd),
    "matmul": (_matmul_fwd, _matmul_bwd),
    "transpose": (_transpose_fwd, _transpose_bwd),
    "reshape": (_reshape_fwd, _reshape_bwd),
    "concatenate": (_concat_fwd, _concat_bwd),
    "slice": (_slice_fwd, _slice_bwd),
    "take": (_take_fwd, _take_bwd),
    "tanh": (_tanh_fwd, _tanh_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "softmax": (_softmax_fwd, _softmax_bwd),
    "log_softmax": (_log_softmax_fwd, _log_softmax_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "mean": (_mean_fwd, _mean_bwd),
    "square": (_square_fwd, _square_bwd),
    "sqrt": (_sqrt_fwd, _sqrt_bwd),
    "log": (_log_fwd, _log_bwd),
    "l2_norm": (_l2norm_fwd, _l2norm_bwd),
}

OP_KINDS = tuple(_OPS)


def forward_op(kind: str, inputs: Sequence[Tensor], **kw) -> Tensor:
    """Apply operation ``kind`` and record the graph edge when needed."""
    try:
        fwd, bwd = _OPS[kind]
    except KeyError:
        raise ContractError(f"unknown operation kind {kind!r}") from None
    inputs = [as_tensor(x) for x in inputs]
    values = [x.values for x in inputs]
    with np.errstate(over="ignore", invalid="ignore"):
        out_values, ctx = fwd(values, **kw)
    if CHECK_FINITE and not np.all(np.isfinite(out_values)):
        raise NonFiniteError(f"{kind}: non-finite value in forward output")
    out = Tensor(out_values)
    if grad_enabled() and any(x.requires_grad for x in inputs):
        out.requires_grad = True

        needs = tuple(x.requires_grad for x in inputs)

        def backward_fn(g, _ctx=ctx, _values=values, _kw=kw):
            return bwd(g, _ctx, _values, needs=needs, **_kw)

        out.node = Node(kind, inputs, backward_fn)
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order[::-1]


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``."""
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss.node is not None:
        if loss.node.consumed:
            raise ContractError("backward already ran on this graph; rebuild it first")
        loss.node.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for t in _topo_order(loss):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ----------------------------------------------------------------------
# convenience wrappers

def tanh(x):
    return forward_op("tanh", [x])


def sigmoid(x):
    return forward_op("sigmoid", [x])


def relu(x):
    return forward_op("relu", [x])


def softmax(x, axis=-1):
    return forward_op("softmax", [x], axis=axis)


def log_softmax(x, axis=-1):
    return forward_op("log_softmax", [x], axis=axis)


def square(x):
    return forward_op("square", [x])


def sqrt(x):
    return forward_op("sqrt", [x])


def log(x):
    return forward_op("log", [x])


def l2_norm(x, axis=-1, keepdims=False):
    return forward_op("l2_norm", [x], axis=axis, keepdims=keepdims)


def concatenate(xs, axis=-1):
    return forward_op("concatenate", list(xs), axis=axis)


def take(x, indices):
    """Gather along the leading axis with an integer index array."""
    return forward_op("take", [x], indices=np.asarray(indices, dtype=np.intp))


def matmul(a, b):
    return forward_op("matmul", [a, b])


# ----------------------------------------------------------------------
# complex numbers as real pairs

@dataclass
class ComplexPair:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        self.re = as_tensor(self.re)
        self.im = as_tensor(self.im)
        if self.re.shape != self.im.shape:
            raise DimensionError(f"ComplexPair: re shape {self.re.shape} != im shape {self.im.shape}")

    @classmethod
    def from_numpy(cls, z, requires_grad=False) -> "ComplexPair":
        z = np.asarray(z, dtype=np.complex128)
        return cls(Tensor(z.real.copy(), requires_grad), Tensor(z.imag.copy(), requires_grad))

    def numpy(self) -> np.ndarray:
        return self.re.values + 1j * self.im.values

    @property
    def shape(self):
        return self.re.shape

    def conj(self) -> "ComplexPair":
        return ComplexPair(self.re, -self.im)

    def __add__(self, other: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.re + other.re, self.im + other.im)

    def __getitem__(self, index) -> "ComplexPair":
        return ComplexPair(self.re[index], self.im[index])

    def abs2(self) -> Tensor:
        return square(self.re) + square(self.im)


def complex_matvec(m: ComplexPair, v: ComplexPair) -> ComplexPair:
    """Product ``M v`` for M of shape (..., m, n) and v of shape (..., n)."""
    if m.re.ndim < 2 or m.shape[-1] != v.shape[-1]:
        raise DimensionError(f"complex_matvec: incompatible shapes {m.shape} and {v.shape}")
    if m.re.ndim == 2:
        # (..., n) @ (n, m) keeps the batch axes of v
        mt_re, mt_im = m.re.T, m.im.T
        if v.re.ndim == 1:
            vr, vi = v.re.reshape(1, -1), v.im.reshape(1, -1)
            out_shape = (m.shape[0],)
        else:
            vr, vi = v.re, v.im
            out_shape = v.shape[:-1] + (m.shape[0],)
        re = matmul(vr, mt_re) - matmul(vi, mt_im)
        im = matmul(vr, mt_im) + matmul(vi, mt_re)
        return ComplexPair(re.reshape(out_shape), im.reshape(out_shape))
    col_shape = v.shape + (1,)
    vr, vi = v.re.reshape(col_shape), v.im.reshape(col_shape)
    re = matmul(m.re, vr) - matmul(m.im, vi)
    im = matmul(m.re, vi) + matmul(m.im, vr)
    out_shape = m.shape[:-1]
    return ComplexPair(re.reshape(out_shape), im.reshape(out_shape))


def complex_inner(a: ComplexPair, b: ComplexPair) -> ComplexPair:
    """``a^H b`` along the last axis (conjugate-linear in ``a``)."""
    if a.shape != b.shape:
        raise DimensionError(f"complex_inner: shapes {a.shape} and {b.shape} differ")
    re = (a.re * b.re + a.im * b.im).sum(axis=-1)
    im = (a.re * b.im - a.im * b.re).sum(axis=-1)
    return ComplexPair(re, im)


def complex_dot(a: ComplexPair, b: ComplexPair) -> ComplexPair:
    """Bilinear ``a^T b`` along the last axis (no conjugation)."""
    if a.shape != b.shape:
        raise DimensionError(f"complex_dot: shapes {a.shape} and {b.shape} differ")
    re = (a.re * b.re - a.im * b.im).sum(axis=-1)
    im = (a.re * b.im + a.im * b.re).sum(axis=-1)
    return ComplexPair(re, im)


# ----------------------------------------------------------------------

def _rel_err(a, n, floor=1e-8):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5,
                      coords: Sequence[int] | None = None) -> float:
    """Max relative error between autodiff and central differences of scalar ``f``.

    ``coords`` restricts the comparison to a subset of flat coordinates of ``x``.
    Relative error uses ``max(|a|, |n|, 1e-8)`` as denominator.
    """
    if step <= 0:
        raise ContractError("finite_diff_check: step must be positive")
    base = x.values.copy()
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    backward(out)
    auto = np.zeros_like(base) if leaf.grad is None else leaf.grad
    idx = range(base.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            xp = base.copy()
            xp.flat[i] += step
            xm = base.copy()
            xm.flat[i] -= step
            num = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2.0 * step)
            worst = max(worst, float(_rel_err(auto.flat[i], num)))
    return worst
