"""Dense tensors on a reverse-mode gradient tape.

Every differentiable op builds its output through :func:`_node`, which records
the parents and a closure mapping the output gradient to parent gradients.
:meth:`Tensor.backward` walks the tape in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from ..errors import DetachedTensor, ShapeMismatch

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _as_array(data, dtype=None):
    a = np.asarray(data, dtype=dtype)
    if a.dtype.kind not in "f":
        a = a.astype(np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basics
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        g = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{g})"

    def __len__(self):
        return self.shape[0]

    # -- tape
    def backward(self, grad=None, retain_graph: bool = False):
        if not self.requires_grad:
            raise DetachedTensor("backward() on a tensor that is not part of a recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)

        order, seen, stack = [], set(), [(self, False)]
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

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
            if not retain_graph:
                node._parents = ()
                node._backward = None

    # -- operators
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(_wrap(o)))

    def __rsub__(self, o):
        return add(_wrap(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(_wrap(o), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return abs_(self)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    ad, bd = a.data, b.data
    return _node(ad / bd, (a, b), lambda g: (unbroadcast(g / bd, ad.shape), unbroadcast(-g * ad / (bd * bd), bd.shape)))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _node(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope).astype(a.dtype)
    return _node(a.data * scale, (a,), lambda g: (g * scale,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,))


def dropout(a: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return _node(a.data * keep, (a,), lambda g: (g * keep,))


# -- reductions and shape -------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# -- softmax family ------------------------------------------------------------------

def logsumexp(a: Tensor, axis=-1, keepdims=False) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _node(out if keepdims else np.squeeze(out, axis=axis), (a,), bw)


def log_softmax(a: Tensor, axis=-1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _node(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(a: Tensor, axis=-1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=axis, keepdims=True)
    return _node(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def pick(a: Tensor, index) -> Tensor:
    """``a[i, index[i]]`` for a 2-D ``a``."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])
    return getitem(a, (rows, index))


# -- 1-D convolution and pooling --------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int | None = None) -> Tensor:
    """Stride-1 cross-correlation of ``x[B, Cin, L]`` with ``w[Cout, Cin, K]``.

    ``padding`` defaults to ``(K - 1) // 2`` zeros per side, which keeps the
    length for odd ``K``.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv1d input {x.shape} vs weight {w.shape}")
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    p = (K - 1) // 2 if padding is None else int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p))) if p else x.data
    Lout = xp.shape[2] - K + 1
    if Lout < 1:
        raise ShapeMismatch("kernel longer than padded input")
    # cols[b, l, c, k] = xp[b, c, l + k]
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)[:, :, :Lout, :]
    cols = cols.transpose(0, 2, 1, 3).reshape(B, Lout, Cin * K)
    wm = w.data.reshape(Cout, Cin * K)
    out = (cols @ wm.T).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gt = g.transpose(0, 2, 1)  # [B, Lout, Cout]
        gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gt @ wm).reshape(B, Lout, Cin, K)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for k in range(K):
                gxp[:, :, k:k + Lout] += gcols[:, :, :, k].transpose(0, 2, 1)
            gx = gxp[:, :, p:p + L] if p else gxp
        gb = g.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
        return (gx, gw, gb)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, bw)


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of ``x[B, Cin, L]`` with ``w[Cin, Cout, K]``.

    Output length ``(L - 1) * stride - 2 * padding + K``.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"conv_transpose1d input {x.shape} vs weight {w.shape}")
    B, Cin, L = x.shape
    _, Cout, K = w.shape
    s, p = int(stride), int(padding)
    full_len = (L - 1) * s + K
    Lout = full_len - 2 * p
    if Lout < 1:
        raise ShapeMismatch("transposed conv output would be empty")
    xt = x.data.transpose(0, 2, 1)  # [B, L, Cin]
    full = np.zeros((B, Cout, full_len), dtype=np.result_type(x.data, w.data))
    span = (L - 1) * s + 1
    for k in range(K):
        full[:, :, k:k + span:s] += (xt @ w.data[:, :, k]).transpose(0, 2, 1)
    out = full[:, :, p:p + Lout]
    if b is not None:
        out = out + b.data[None, :, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gfull = np.zeros((B, Cout, full_len), dtype=g.dtype)
        gfull[:, :, p:p + Lout] = g
        gx = np.zeros_like(xt) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for k in range(K):
            gk = gfull[:, :, k:k + span:s].transpose(0, 2, 1)  # [B, L, Cout]
            if gx is not None:
                gx += gk @ w.data[:, :, k].T
            if gw is not None:
                gw[:, :, k] = np.tensordot(xt, gk, axes=([0, 1], [0, 1]))
        gb = g.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
        return (gx.transpose(0, 2, 1) if gx is not None else None, gw, gb)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, bw)


def maxpool1d(x: Tensor, m: int) -> Tensor:
    """Max over non-overlapping windows of size ``m``; the last window may be partial.

    Output length is ``ceil(L / m)``. Gradients route to the first maximal
    element of each window.
    """
    B, C, L = x.shape
    m = int(m)
    if m < 1:
        raise ValueError("pool size must be >= 1")
    if m == 1:
        return x
    Lo = math.ceil(L / m)
    pad = Lo * m - L
    xd = x.data
    if pad:
        xd = np.concatenate([xd, np.full((B, C, pad), -np.inf, dtype=xd.dtype)], axis=2)
    win = xd.reshape(B, C, Lo, m)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]

    def bw(g):
        gw = np.zeros((B, C, Lo, m), dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=3)
        return (gw.reshape(B, C, Lo * m)[:, :, :L],)

    return _node(out, (x,), bw)
