"""A small define-by-run reverse-mode autodiff over numpy arrays.

Every primitive returns a :class:`Tensor` remembering its parents and a
closure that pushes the output adjoint back to them.  :func:`backward`
orders the recorded graph topologically and sweeps it in reverse.
Broadcasting is supported where numpy broadcasts; adjoints are summed back
to the operand shapes.
"""

from __future__ import annotations

import contextlib

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    pass


class RankError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return mul(self, 1.0 / other) if np.isscalar(other) else div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def backward(loss: Tensor):
    """Populate ``.grad`` on every tensor reachable from scalar ``loss``.

    Leaf gradients accumulate across calls; interior adjoints are reset.
    """
    if loss.data.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    order, seen = [], set()
    stack = [(loss, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        if not node.is_leaf:
            node.grad = None
    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        _accum(loss, seed)
    else:
        loss.grad = seed
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- elementwise ----------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), bw)


def power(x, k):
    """``x ** k`` for a constant exponent."""
    return _node(x.data**k, (x,), lambda g: _accum(x, g * k * x.data ** (k - 1)))


def exp(x):
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: _accum(x, g * out))


def log(x):
    return _node(np.log(x.data), (x,), lambda g: _accum(x, g / x.data))


def sigmoid(x):
    out = np.exp(-np.logaddexp(0.0, -x.data))
    return _node(out, (x,), lambda g: _accum(x, g * out * (1.0 - out)))


def tanh(x):
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: _accum(x, g * (1.0 - out**2)))


def relu(x):
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: _accum(x, g * mask))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """tanh approximation of GELU."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        _accum(x, g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner))

    return _node(out, (x,), bw)


# -- reductions and shape -------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _node(out, (x,), bw)


def mean(x, axis=None, keepdims=False):
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _node(out, (x,), lambda g: _accum(x, g.reshape(x.shape)))


def transpose(x, axes=None):
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _node(out, (x,), lambda g: _accum(x, np.transpose(g, inv)))


def take(x, index):
    """Basic or advanced indexing; covers slicing and row gathers."""
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        _accum(x, full)

    return _node(np.array(out, copy=True), (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accum(t, piece)

    return _node(out, tensors, bw)


# -- linear algebra ---------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _node(out, (a, b), bw)


# -- normalisation and probabilities ------------------------------------------------


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (x,), bw)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        _accum(x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _node(out, (x,), bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        _accum(beta, _unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            m = x.shape[-1]
            dx = inv / m * (m * gx - gx.sum(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _accum(x, dx)

    return _node(out, (x, gamma, beta), bw)


def embedding(weight, ids):
    """Row lookup ``weight[ids]``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: ids outside [0, {weight.shape[0]})")
    return take(weight, ids)


def dropout(x, rate, rng, training=True):
    """Inverted dropout; identity when not training, ``rate == 0`` or ``rng is None``."""
    if not training or rate == 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda g: _accum(x, g * keep))


def cross_entropy(logits, targets, reduction="mean"):
    """Negative log-likelihood of integer ``targets`` under row-wise softmax.

    ``logits`` is ``(N, V)``; reduction is ``"mean"``, ``"sum"`` or ``"none"``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(targets.shape[0])
    nll = -logp[rows, targets]
    scale = {"mean": 1.0 / max(len(targets), 1), "sum": 1.0, "none": None}[reduction]
    out = nll if scale is None else nll.sum() * scale

    def bw(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        w = g[:, None] if scale is None else g * scale
        _accum(logits, d * w)

    return _node(out, (logits,), bw)


def custom(value, parents, vjp):
    """Wrap an externally computed ``value`` with a hand-written adjoint.

    ``vjp(g)`` returns one adjoint array (or ``None``) per parent.
    """
    parents = tuple(parents)

    def bw(g):
        for p, gp in zip(parents, vjp(g)):
            if gp is not None:
                _accum(p, gp)

    return _node(value, parents, bw)
