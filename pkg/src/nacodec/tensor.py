"""Reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps an ndarray and remembers how it was produced. Calling
``backward()`` on a scalar result walks the recorded graph in reverse
topological order and accumulates gradients into every leaf tensor created
with ``requires_grad=True``. Only float arrays are differentiated; integer
index arrays are passed around as plain numpy.

The op set is intentionally small: elementwise math, reductions, shape
moves, matmul, the softmax family and an embedding gather. Convolutions and
the spectral ops live in their own modules and plug into the same graph
through :func:`node`.
"""

from __future__ import annotations

import contextlib

import numpy as np

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bw = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- graph machinery ----------------------------------------------------

    def _accum(self, g):
        # Out-of-place addition: backward closures may hand the same array to
        # several parents, so in-place += would corrupt siblings.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        self.requires_grad = flag
        return self

    def backward(self, gradient=None):
        """Run reverse-mode accumulation from this tensor.

        Without an explicit ``gradient`` the tensor must be scalar. Gradients
        of intermediate nodes are freed as soon as they have been propagated;
        leaves keep theirs (and accumulate across calls).
        """
        if gradient is None:
            if self.data.size != 1:
                raise ValueError(
                    "backward() without a gradient argument requires a scalar"
                )
            gradient = np.ones_like(self.data)
        else:
            gradient = np.asarray(gradient, dtype=self.data.dtype)
            if gradient.shape != self.data.shape:
                raise ValueError("gradient shape mismatch")
        if not (self.requires_grad or self._parents):
            return

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                topo.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for p in tensor._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._accum(gradient)
        for tensor in reversed(topo):
            if tensor._bw is not None:
                if tensor.grad is not None:
                    tensor._bw(tensor.grad)
                tensor.grad = None

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor_like(other, self), -1.0))

    def __rsub__(self, other):
        return add(as_tensor_like(other, self), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor_like(other, self), self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method sugar -------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def as_tensor_like(x, ref: Tensor) -> Tensor:
    """Wrap ``x``, casting bare python scalars to the reference dtype."""
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=ref.data.dtype))
    return Tensor(np.asarray(x))


def node(data, parents, bw) -> Tensor:
    """Create a graph node. ``parents`` are the inputs that require grad."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = True
    t._parents = parents
    t._bw = bw
    return t


def tracks(*tensors) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad or t._parents for t in tensors)


def _needs(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def _parents_of(*tensors):
    return tuple(t for t in tensors if _needs(t))


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    b = as_tensor_like(b, a)
    out = a.data + b.data
    if not tracks(a, b):
        return Tensor(out)

    def bw(g):
        if _needs(a):
            a._accum(unbroadcast(g, a.data.shape))
        if _needs(b):
            b._accum(unbroadcast(g, b.data.shape))

    return node(out, _parents_of(a, b), bw)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor_like(b, a)
    out = a.data * b.data
    if not tracks(a, b):
        return Tensor(out)

    def bw(g):
        if _needs(a):
            a._accum(unbroadcast(g * b.data, a.data.shape))
        if _needs(b):
            b._accum(unbroadcast(g * a.data, b.data.shape))

    return node(out, _parents_of(a, b), bw)


def div(a, b):
    a = as_tensor(a)
    b = as_tensor_like(b, a)
    out = a.data / b.data
    if not tracks(a, b):
        return Tensor(out)

    def bw(g):
        if _needs(a):
            a._accum(unbroadcast(g / b.data, a.data.shape))
        if _needs(b):
            b._accum(unbroadcast(-g * out / b.data, b.data.shape))

    return node(out, _parents_of(a, b), bw)


def power(x, p):
    x = as_tensor(x)
    if not isinstance(p, (int, float)):
        raise TypeError("power supports scalar exponents only")
    out = x.data**p
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g * p * x.data ** (p - 1))

    return node(out, (x,), bw)


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with ndim >= 2")
    out = a.data @ b.data
    if not tracks(a, b):
        return Tensor(out)

    def bw(g):
        if _needs(a):
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(unbroadcast(ga, a.data.shape))
        if _needs(b):
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(unbroadcast(gb, b.data.shape))

    return node(out, _parents_of(a, b), bw)


# -- pointwise nonlinearity -------------------------------------------------


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g * out)

    return node(out, (x,), bw)


def log(x):
    x = as_tensor(x)
    out = np.log(x.data)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g / x.data)

    return node(out, (x,), bw)


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g * (0.5 / out))

    return node(out, (x,), bw)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g * (1.0 - out * out))

    return node(out, (x,), bw)


def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g * out * (1.0 - out))

    return node(out, (x,), bw)


def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g * (x.data > 0))

    return node(out, (x,), bw)


def leaky_relu(x, slope: float = 0.2):
    x = as_tensor(x)
    out = np.where(x.data > 0, x.data, slope * x.data)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g * np.where(x.data > 0, 1.0, slope).astype(x.data.dtype))

    return node(out, (x,), bw)


def elu(x, alpha: float = 1.0):
    x = as_tensor(x)
    neg = x.data < 0
    out = np.where(neg, alpha * np.expm1(x.data), x.data)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        # d/dx alpha*(e^x - 1) = alpha*e^x = out + alpha on the negative side
        x._accum(g * np.where(neg, out + alpha, 1.0))

    return node(out, (x,), bw)


def absval(x):
    x = as_tensor(x)
    out = np.abs(x.data)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g * np.sign(x.data))

    return node(out, (x,), bw)


def clip(x, lo=None, hi=None):
    """Clamp with constant (possibly array) bounds; gradient is 1 inside."""
    x = as_tensor(x)
    lo_a = None if lo is None else np.asarray(lo, dtype=x.data.dtype)
    hi_a = None if hi is None else np.asarray(hi, dtype=x.data.dtype)
    out = np.clip(x.data, lo_a, hi_a)
    if not tracks(x):
        return Tensor(out)
    mask = np.ones_like(x.data, dtype=bool)
    if lo_a is not None:
        mask &= x.data >= lo_a
    if hi_a is not None:
        mask &= x.data <= hi_a

    def bw(g):
        x._accum(g * mask)

    return node(out, (x,), bw)


# -- reductions -------------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        gg = np.asarray(g)
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        x._accum(np.broadcast_to(gg, x.data.shape))

    return node(out, (x,), bw)


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.data.size if axis is None else x.data.size // out.size
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        gg = np.asarray(g) / n
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        x._accum(np.broadcast_to(gg, x.data.shape))

    return node(out, (x,), bw)


# -- shape moves ------------------------------------------------------------


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g.reshape(x.data.shape))

    return node(out, (x,), bw)


def transpose(x, axes=None):
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    if not tracks(x):
        return Tensor(out)
    inv = None if axes is None else tuple(np.argsort(axes))

    def bw(g):
        x._accum(np.transpose(g, inv))

    return node(out, (x,), bw)


def getitem(x, idx):
    x = as_tensor(x)
    out = x.data[idx]
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        buf = np.zeros_like(x.data)
        buf[idx] = g
        x._accum(buf)

    return node(out, (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    if not tracks(*tensors):
        return Tensor(out)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if _needs(t):
                t._accum(p)

    return node(out, _parents_of(*tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    if not tracks(*tensors):
        return Tensor(out)

    def bw(g):
        parts = np.split(g, len(tensors), axis=axis)
        for t, p in zip(tensors, parts):
            if _needs(t):
                t._accum(np.squeeze(p, axis=axis))

    return node(out, _parents_of(*tensors), bw)


def pad(x, pad_width):
    """Zero padding; ``pad_width`` as for np.pad."""
    x = as_tensor(x)
    out = np.pad(x.data, pad_width)
    if not tracks(x):
        return Tensor(out)
    slices = tuple(
        slice(before, before + n) for (before, _), n in zip(pad_width, x.data.shape)
    )

    def bw(g):
        x._accum(g[slices])

    return node(out, (x,), bw)


# -- softmax family ---------------------------------------------------------


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        x._accum(out * (g - dot))

    return node(out, (x,), bw)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    if not tracks(x):
        return Tensor(out)

    def bw(g):
        x._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return node(out, (x,), bw)


def cross_entropy_logits(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``logits``: [..., n_classes]; ``targets``: integer array of the leading
    shape. Fused for stability; backward is softmax minus one-hot.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets)
    if t.shape != logits.data.shape[:-1]:
        raise ValueError("targets shape must match logits minus class axis")
    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    picked = np.take_along_axis(ls, t[..., None], axis=-1)[..., 0]
    out = np.asarray(-picked.mean())
    if not tracks(logits):
        return Tensor(out)
    n = picked.size

    def bw(g):
        buf = np.exp(ls) * (g / n)
        idx = t[..., None]
        cur = np.take_along_axis(buf, idx, axis=-1)
        np.put_along_axis(buf, idx, cur - g / n, axis=-1)
        logits._accum(buf)

    return node(out, (logits,), bw)


def embedding(table, idx):
    """Row gather ``table[idx]`` with scatter-add backward."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    out = table.data[idx]
    if not tracks(table):
        return Tensor(out)

    def bw(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        table._accum(buf)

    return node(out, (table,), bw)


def straight_through(soft: Tensor, hard) -> Tensor:
    """Forward the value of ``hard``, backward as if it were ``soft``."""
    soft = as_tensor(soft)
    hard_data = hard.data if isinstance(hard, Tensor) else np.asarray(hard)
    return soft + Tensor(hard_data - soft.data)
