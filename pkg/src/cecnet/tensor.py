"""Dense tensors with reverse-mode automatic differentiation.

Every array lives in a :class:`Tensor`. Operations record their parents and a
closure mapping the output gradient to parent gradients; :func:`backward`
walks the graph in reverse topological order and accumulates the chain rule.

The default precision is float64. ``set_precision("f32")`` switches newly
created tensors to float32.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

_DTYPES = {"f64": np.float64, "f32": np.float32}
_dtype = np.float64
_grad_state = threading.local()


def set_precision(name: str) -> None:
    global _dtype
    if name not in _DTYPES:
        raise ParameterError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _dtype = _DTYPES[name]


def get_dtype():
    return _dtype


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return _node(self.data + other.data, (self, other),
                     lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return _node(self.data - other.data, (self, other),
                     lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return _node(x * y, (self, other),
                     lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        out = x / y
        return _node(out, (self, other),
                     lambda g: (_unbroadcast(g / y, x.shape),
                                _unbroadcast(-g * out / y, y.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self.data
        p = float(exponent)
        return _node(x ** p, (self,), lambda g: (g * p * x ** (p - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, index):
        x = self.data
        if isinstance(index, Tensor):
            index = index.data.astype(np.intp)
        parts = index if isinstance(index, tuple) else (index,)
        basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

        def back(g):
            full = np.zeros_like(x)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return _node(x[index], (self,), back)

    # -- shape -----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return _node(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return _node(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    def swapaxes(self, a, b):
        return _node(self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),))

    def expand_dims(self, axis):
        src = self.shape
        return _node(np.expand_dims(self.data, axis), (self,), lambda g: (g.reshape(src),))

    # -- reductions ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        src = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src).copy(),)

        return _node(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise -----------------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return _node(out, (self,), lambda g: (g * out,))

    def log(self):
        x = self.data
        return _node(np.log(x), (self,), lambda g: (g / x,))

    def relu(self):
        x = self.data
        return _node(np.maximum(x, 0.0), (self,), lambda g: (g * (x > 0),))

    def sigmoid(self):
        out = 1.0 / (1.0 + np.exp(-self.data))
        return _node(out, (self,), lambda g: (g * out * (1.0 - out),))

    def sqrt(self):
        out = np.sqrt(self.data)
        return _node(out, (self,), lambda g: (g * 0.5 / out,))

    def clip_min(self, floor):
        x = self.data
        return _node(np.maximum(x, floor), (self,), lambda g: (g * (x >= floor),))

    def backward(self):
        backward(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents, back) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = back
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every graph node that requires a gradient.

    Leaf gradients accumulate across calls; interior gradients are overwritten.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any parameter that requires grad")

    order, seen, stack = [], set(), [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# -- functional ops ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    x, y = a.data, b.data

    def back(g):
        return (_unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape),
                _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape))

    return _node(x @ y, (a, b), back)


def softmax(a: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    a = as_tensor(a)
    z = a.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)) / temperature,)

    return _node(out, (a,), back)


def softmax_rows(a: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of ``a / temperature`` with max subtraction."""
    return softmax(a, axis=-1, temperature=temperature)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), back)


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row (last axis) by ``max(||row||_2, eps)``."""
    a = as_tensor(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    active = norm > eps
    denom = np.where(active, norm, eps)
    out = x / denom

    def back(g):
        radial = np.where(active, (g * out).sum(axis=-1, keepdims=True), 0.0)
        return ((g - out * radial) / denom,)

    return _node(out, (a,), back)


def relu(a):
    return as_tensor(a).relu()


def sigmoid(a):
    return as_tensor(a).sigmoid()


def exp(a):
    return as_tensor(a).exp()


def log(a):
    return as_tensor(a).log()


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0,
           stride: int = 1) -> Tensor:
    """2D cross-correlation in channels-last layout.

    x: (B, H, W, C), weight: (O, kh, kw, C), bias: (O,) -> (B, H', W', O).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[-1] != weight.shape[-1]:
        raise DimensionError(f"conv2d shapes incompatible: {x.shape} and {weight.shape}")
    out_ch, kh, kw, in_ch = weight.shape
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    batch, hp, wp, _ = xd.shape
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(1, 2))
    if stride > 1:
        windows = windows[:, ::stride, ::stride][:, :ho, :wo]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(batch * ho * wo, kh * kw * in_ch)
    wmat = weight.data.reshape(out_ch, -1)
    out = cols @ wmat.T
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        parents = (x, weight, bias)

    def back(g):
        g2 = g.reshape(-1, out_ch)
        gw = (g2.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(batch, ho, wo, kh, kw, in_ch)
            gxp = np.zeros(xd.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * (ho - 1) + 1:stride,
                        j:j + stride * (wo - 1) + 1:stride, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, padding:hp - padding, padding:wp - padding, :] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out.reshape(batch, ho, wo, out_ch), parents, back)


def max_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k max pooling on (B, H, W, C); H and W must divide by k.

    Tied maxima share the gradient equally.
    """
    x = as_tensor(x)
    b, h, w, c = x.shape
    if h % k or w % k:
        raise DimensionError(f"max_pool2d: {h}x{w} not divisible by {k}")
    blocks = x.data.reshape(b, h // k, k, w // k, k, c)
    out = blocks.max(axis=(2, 4))

    def back(g):
        mask = blocks == out[:, :, None, :, None, :]
        share = mask / mask.sum(axis=(2, 4), keepdims=True)
        return ((share * g[:, :, None, :, None, :]).reshape(b, h, w, c),)

    return _node(out, (x,), back)
