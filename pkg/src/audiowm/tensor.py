"""Minimal reverse-mode autodiff over numpy arrays.

Every differentiable operation is a :class:`Primitive` registered in
``PRIMITIVES``.  Networks are written as plain functions over :class:`Tensor`
values; :func:`forward_backward` runs such a function and returns the loss and
the gradient of every named parameter.

Compute is float32 by default.  Gradient checks switch to float64 through
:func:`precision`.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, node: str):
        super().__init__(f"non-finite value produced at node '{node}'")
        self.node = node


_DTYPE = [np.float32]


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the compute dtype (e.g. ``np.float64`` for gradchecks)."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@dataclass
class Primitive:
    name: str
    forward: Callable
    backward: Callable


PRIMITIVES: dict[str, Primitive] = {}


def primitive(name: str):
    def wrap(cls):
        PRIMITIVES[name] = Primitive(name, cls.forward, cls.backward)
        return cls

    return wrap


class Tensor:
    __slots__ = ("data", "grad", "parents", "ctx", "op", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad = None
        self.parents: tuple = ()
        self.ctx = None
        self.op: str | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, name={self.name})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = _topo(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = PRIMITIVES[node.op].backward(node.ctx, g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not isinstance(parent, Tensor) or not _needs_grad(parent):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t.parents)


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Tensor) and id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(name: str, *inputs, **kwargs) -> Tensor:
    prim = PRIMITIVES[name]
    tensors = tuple(as_tensor(x) for x in inputs)
    out, ctx = prim.forward(*(t.data for t in tensors), **kwargs)
    dtype = default_dtype()
    if out.dtype != dtype:
        out = out.astype(dtype)
    # a sum is non-finite iff some entry is (barring float overflow of the sum itself)
    if not math.isfinite(float(out.sum())):
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(name)
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    result.requires_grad = False
    result.name = None
    if any(_needs_grad(t) for t in tensors):
        result.parents = tensors
        result.ctx = ctx
        result.op = name
    else:
        result.parents = ()
        result.ctx = None
        result.op = None
    return result


# --- primitives -------------------------------------------------------------


@primitive("add")
class _Add:
    def forward(a, b):
        return a + b, (a.shape, b.shape)

    def backward(ctx, g):
        sa, sb = ctx
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


@primitive("sub")
class _Sub:
    def forward(a, b):
        return a - b, (a.shape, b.shape)

    def backward(ctx, g):
        sa, sb = ctx
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)


@primitive("mul")
class _Mul:
    def forward(a, b):
        return a * b, (a, b)

    def backward(ctx, g):
        a, b = ctx
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@primitive("scale")
class _Scale:
    def forward(a, factor):
        return a * factor, factor

    def backward(ctx, g):
        return (g * ctx,)


@primitive("matmul")
class _Matmul:
    # operands must be at least 2-D; leading axes broadcast
    def forward(a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")
        if b.ndim == 2 and a.ndim > 2:
            # activations x weight: one flat GEMM
            out = (a.reshape(-1, a.shape[-1]) @ b).reshape(*a.shape[:-1], b.shape[-1])
            return out, (a, b)
        return np.matmul(a, b), (a, b)

    def backward(ctx, g):
        a, b = ctx
        if b.ndim == 2 and a.ndim > 2:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.T).reshape(a.shape)
            gb = a.reshape(-1, a.shape[-1]).T @ g2
            return ga, gb
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@primitive("tanh")
class _Tanh:
    def forward(a):
        y = np.tanh(a)
        return y, y

    def backward(ctx, g):
        return (g * (1.0 - ctx * ctx),)


@primitive("sigmoid")
class _Sigmoid:
    def forward(a):
        y = 0.5 * (1.0 + np.tanh(0.5 * a))
        return y, y

    def backward(ctx, g):
        return (g * ctx * (1.0 - ctx),)


_GELU_C = math.sqrt(2.0 / math.pi)


@primitive("gelu")
class _Gelu:
    # tanh approximation
    def forward(a):
        inner = _GELU_C * (a + 0.044715 * (a * a * a))
        th = np.tanh(inner)
        return 0.5 * a * (1.0 + th), (a, th)

    def backward(ctx, g):
        a, th = ctx
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * d_inner),)


@primitive("softmax")
class _Softmax:
    def forward(a):
        e = np.exp(a - a.max(axis=-1, keepdims=True))
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def backward(ctx, g):
        y = ctx
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


@primitive("layer_norm")
class _LayerNorm:
    # normalizes the last axis, no affine parameters
    def forward(a, eps=1e-5):
        mu = a.mean(axis=-1, keepdims=True)
        xc = a - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        y = xc * inv
        return y, (y, inv)

    def backward(ctx, g):
        y, inv = ctx
        n = y.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).sum(axis=-1, keepdims=True) / n
        return (inv * (g - gm - y * gy),)


@primitive("reshape")
class _Reshape:
    def forward(a, shape):
        return a.reshape(shape), a.shape

    def backward(ctx, g):
        return (g.reshape(ctx),)


@primitive("transpose")
class _Transpose:
    def forward(a, axes):
        return np.transpose(a, axes), axes

    def backward(ctx, g):
        return (np.transpose(g, np.argsort(ctx)),)


@primitive("slice")
class _Slice:
    def forward(a, index):
        return a[index], (a.shape, index)

    def backward(ctx, g):
        shape, index = ctx
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return (out,)


@primitive("concat")
class _Concat:
    def forward(*arrays, axis=0):
        sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis), (sizes, axis)

    def backward(ctx, g):
        sizes, axis = ctx
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))


@primitive("mean")
class _Mean:
    def forward(a, axis=None):
        return np.asarray(a.mean(axis=axis, keepdims=axis is not None)), (a.shape, axis)

    def backward(ctx, g):
        shape, axis = ctx
        n = np.prod(shape) if axis is None else shape[axis]
        return (np.broadcast_to(g / n, shape).copy(),)


@primitive("mean_square")
class _MeanSquare:
    def forward(a):
        return np.asarray((a * a).mean()), a

    def backward(ctx, g):
        a = ctx
        return (g * 2.0 * a / a.size,)


# --- functional surface -----------------------------------------------------


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def scale(a, factor: float):
    return apply("scale", a, factor=factor)


def matmul(a, b):
    return apply("matmul", a, b)


def tanh(a):
    return apply("tanh", a)


def sigmoid(a):
    return apply("sigmoid", a)


def gelu(a):
    return apply("gelu", a)


def softmax(a):
    return apply("softmax", a)


def layer_norm(a, eps: float = 1e-5):
    return apply("layer_norm", a, eps=eps)


def reshape(a, shape):
    return apply("reshape", a, shape=tuple(shape))


def transpose(a, axes):
    return apply("transpose", a, axes=tuple(axes))


def take(a, index):
    return apply("slice", a, index=index)


def concat(tensors, axis=0):
    return apply("concat", *tensors, axis=axis)


def mean(a, axis=None):
    return apply("mean", a, axis=axis)


def mean_square(a):
    return apply("mean_square", a)


def forward_backward(fn: Callable, params: dict, *inputs):
    """Evaluate ``fn(P, *inputs)`` and differentiate it.

    ``params`` maps names to arrays; ``fn`` receives the same names mapped to
    :class:`Tensor` leaves and must return a scalar Tensor.  Returns
    ``(loss, grads)`` with one gradient array per parameter (zeros for
    parameters the loss does not touch).
    """
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    loss = fn(leaves, *inputs)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss")
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return float(loss.data), grads
