"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

A ``Tape`` records every primitive applied to tracked tensors while it is
active::

    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = (w * w).sum()
    grads = tape.backward(loss)
    grads[w]  # -> array([2., 2., 2.])

Tensors that are neither parameters nor derived from parameters are treated
as constants and never enter the tape.
"""
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from evidentia.errors import ContractError, ShapeError

_state = threading.local()


def _stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array with an optional place on the active tape."""

    __slots__ = ("data", "requires_grad", "_tape", "_index", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._tape = None
        self._index = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, grad={self.requires_grad})"

    def tracked(self, tape):
        return self.requires_grad or (self._tape is tape and self._index is not None)

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


@dataclass
class Node:
    out: Tensor
    parents: tuple
    vjp: Callable
    op: str


class Tape:
    """Ordered record of primitive applications; one tape per worker thread."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def record(self, op, out, parents, vjp):
        out._tape = self
        out._index = len(self.nodes)
        self.nodes.append(Node(out, parents, vjp, op))
        return out

    def backward(self, loss):
        """Gradient of scalar ``loss`` with respect to every leaf parameter.

        Returns a dict keyed by the parameter tensors (identity hashing).
        """
        return backward(self, loss)


def backward(tape, loss):
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", np.shape(loss))
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    grads = {}
    leaves = {}
    if loss._tape is not tape or loss._index is None:
        if loss.requires_grad:
            return {loss: np.ones_like(loss.data)}
        return {}
    grads[id(loss)] = np.ones_like(loss.data)
    for node in reversed(tape.nodes[: loss._index + 1]):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.tracked(tape):
                continue
            key = id(parent)
            if parent._tape is not tape or parent._index is None:
                leaves[key] = parent
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {leaves[k]: grads[k] for k in leaves if k in grads}


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op, data, parents, vjp):
    """Wrap ``data`` as the output of ``op``; record it if any parent is tracked."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.tracked(tape) for p in parents):
        tape.record(op, out, parents, vjp)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _apply("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _apply("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _apply("mul", a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _apply("div", out, (a, b), vjp)


# ---------------------------------------------------------------------------
# elementwise unary


def neg(x):
    x = as_tensor(x)
    return _apply("neg", -x.data, (x,), lambda g: (-g,))


def power(x, k):
    """x ** k for a constant real exponent k."""
    x = as_tensor(x)
    k = float(k)
    return _apply("power", x.data ** k, (x,), lambda g: (g * k * x.data ** (k - 1.0),))


def abs_(x):
    x = as_tensor(x)
    return _apply("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def log(x):
    x = as_tensor(x)
    return _apply("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _apply("exp", out, (x,), lambda g: (g * out,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _apply("sqrt", out, (x,), lambda g: (0.5 * g / out,))


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _apply("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x):
    x = as_tensor(x)
    v = x.data
    out = np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0.0)
    return _apply("softplus", out, (x,), lambda g: (g * _sigmoid(v),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """GELU, tanh approximation."""
    x = as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    th = np.tanh(inner)
    out = 0.5 * v * (1.0 + th)

    def vjp(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th ** 2) * d_inner),)

    return _apply("gelu", out, (x,), vjp)


def lgamma(x):
    from evidentia.diffcore.special import digamma as _digamma, log_gamma as _log_gamma

    x = as_tensor(x)
    out = np.asarray(_log_gamma(x.data), dtype=np.float64)
    return _apply("lgamma", out, (x,), lambda g: (g * _digamma(x.data),))


def digamma(x):
    from evidentia.diffcore.special import digamma as _digamma, trigamma as _trigamma

    x = as_tensor(x)
    out = np.asarray(_digamma(x.data), dtype=np.float64)
    return _apply("digamma", out, (x,), lambda g: (g * _trigamma(x.data),))


# ---------------------------------------------------------------------------
# reductions and shape


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _apply("sum", out, (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return sum_(x, axis=axes, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return _apply("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)
    return _apply("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def getitem(x, index):
    x = as_tensor(x)
    out = x.data[index]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _apply("getitem", np.array(out, dtype=np.float64), (x,), vjp)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError("concat", ref.shape, t.shape, detail=f"axis={axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def vjp(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return _apply("concat", out, tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# linear algebra and layers


def matmul(a, b):
    """Matrix product with numpy's batching rules on leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _apply("matmul", out, (a, b), vjp)


def linear(x, weight, bias=None):
    """x @ weight.T + bias for x of shape (..., in) and weight (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    out = matmul(x, transpose(weight))
    return out if bias is None else out + bias


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _apply("softmax", out, (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv_std = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx_hat = g * gain.data
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        gg = _unbroadcast(g * xhat, gain.shape)
        gb = _unbroadcast(g, bias.shape)
        return gx, gg, gb

    return _apply("layer_norm", out, (x, gain, bias), vjp)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation. x: (B, Cin, H, W), weight: (Cout, Cin, k, k)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    bsz, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", x.shape, weight.shape, detail="kernel larger than input")
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (B, Ho, Wo, Cin, kh, kw) -> rows of the im2col matrix
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(bsz * ho * wo, cout)
        gw = (g2.T @ cols).reshape(weight.shape)
        dcols = (g2 @ wmat).reshape(bsz, ho, wo, cin, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = dxp[:, :, padding:padding + h, padding:padding + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _apply("conv2d", out, parents, vjp)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate == 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


# names of every differentiable primitive, used by the gradient-check suite
PRIMITIVES = (
    "add", "sub", "mul", "div", "neg", "power", "abs", "log", "exp", "sqrt",
    "sigmoid", "softplus", "gelu", "lgamma", "digamma", "sum", "reshape",
    "transpose", "getitem", "concat", "matmul", "softmax", "layer_norm", "conv2d",
)
