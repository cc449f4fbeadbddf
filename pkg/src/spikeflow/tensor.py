"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations build a graph on the fly;
:meth:`Tensor.backward` walks it in reverse topological order and accumulates
gradients into every leaf that has ``requires_grad`` set.

Arithmetic is float32 by default. Passing float64 arrays keeps float64 through
every op, which the gradient checks rely on.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


@dataclass(frozen=True)
class SurrogateSpec:
    """Surrogate derivative used by the spike (Heaviside) node.

    Only the arctangent family is supported; ``width`` is its sharpness
    parameter alpha, giving ``g(0) = alpha / 2``.
    """

    kind: str = "atan"
    width: float = 2.0

    def __post_init__(self):
        if self.kind != "atan":
            raise ValueError(f"unsupported surrogate kind {self.kind!r}")
        if not self.width > 0:
            raise ValueError("surrogate width must be positive")

    def grad(self, v):
        a = self.width
        return a / (2.0 * (1.0 + (math.pi * a * v / 2.0) ** 2))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties -------------------------------------------------
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

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # -- graph ------------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        ``self`` must be a scalar unless an explicit seed ``grad`` is given.
        Repeated calls accumulate.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)

        order = _topo_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.dtype != parent.data.dtype:
                    pg = pg.astype(parent.data.dtype)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
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
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _topo_order(root):
    order = []
    seen = set()
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
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _make(data, parents, backward):
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ------------------------------------------------------------
def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    """Elementwise (Hadamard) product with broadcasting."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        scale = np.asarray(b, dtype=a.dtype)
        return _make(a.data * scale, (a,), lambda g: (unbroadcast(g * scale, a.shape),))
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), backward)


hadamard = mul


def div(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / float(b))
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data

    def backward(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _make(ad / bd, (a, b), backward)


def abs_(x):
    x = as_tensor(x)
    sign = np.sign(x.data)  # subgradient 0 at 0
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2.0 * out),))


# -- reductions and shape ops ----------------------------------------------
def sum_axis(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for ax in axes:
            if not -len(shape) <= ax < len(shape):
                raise ShapeError(f"sum: axis {ax} out of range for shape {shape}")
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * len(shape))
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_axis(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def getitem(x, idx):
    x = as_tensor(x)
    shape = x.shape
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (slice, int)) for p in parts)

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(np.array(x.data[idx]), (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def pad(x, widths):
    """Zero-pad; ``widths`` is a per-axis list of (before, after)."""
    x = as_tensor(x)
    widths = [tuple(w) for w in widths]
    if all(w == (0, 0) for w in widths):
        return x
    sl = tuple(slice(b, b + n) for (b, _), n in zip(widths, x.shape))
    return _make(np.pad(x.data, widths), (x,), lambda g: (g[sl],))


def crop(x, sizes):
    """Keep the leading ``sizes[i]`` entries of every axis."""
    return getitem(x, tuple(slice(0, n) for n in sizes)) if tuple(sizes) != x.shape else x


def roll(x, shifts, axes):
    x = as_tensor(x)
    shifts = tuple(shifts)
    axes = tuple(axes)
    if not any(shifts):
        return x
    neg = tuple(-s for s in shifts)
    return _make(np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, neg, axes),))


# -- linear algebra ---------------------------------------------------------
def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis of ``x`` (any leading shape)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input features {x.shape[-1]} != weight in_features {weight.shape[1]}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1]))
    out = matmul(flat, transpose(weight, (1, 0)))
    if bias is not None:
        out = add(out, bias)
    return reshape(out, lead + (weight.shape[0],))


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, kh, kw)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {cw}")
    oh, ow = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    xd = np.ascontiguousarray(x.data)
    cols = kernels.im2col(xd, kh, kw, stride, padding, oh, ow).reshape(n * oh * ow, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.ascontiguousarray((gmat @ wmat).reshape(n, oh, ow, c, kh, kw))
            gx = kernels.col2im(gcols, h, w, stride, padding)
        if weight.requires_grad:
            gw = (gmat.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    """Transposed convolution; ``weight`` is (C_in, C_out, kh, kw)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    ci, o, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv_transpose2d: input has {c} channels, weight expects {ci}")
    oh = (h - 1) * stride - 2 * padding + kh + output_padding
    ow = (w - 1) * stride - 2 * padding + kw + output_padding
    xmat = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    wmat = weight.data.reshape(c, o * kh * kw)
    cols = np.ascontiguousarray((xmat @ wmat).reshape(n, h, w, o, kh, kw))
    out = kernels.col2im(cols, oh, ow, stride, padding)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def backward(g):
        gcols = kernels.im2col(np.ascontiguousarray(g), kh, kw, stride, padding, h, w)
        gcols = gcols.reshape(n * h * w, o * kh * kw)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.ascontiguousarray((gcols @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2))
        if weight.requires_grad:
            gw = (xmat.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def batch_norm(x, gamma, beta, axis=1, eps=1e-5):
    """Normalise with the statistics of the current batch along every axis but ``axis``."""
    x = as_tensor(x)
    ax = axis % x.ndim
    red = tuple(i for i in range(x.ndim) if i != ax)
    m = int(np.prod([x.shape[i] for i in red])) if red else 1
    if m == 0:
        raise ShapeError("batch_norm: empty batch")
    if x.shape[ax] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: {x.shape[ax]} channels vs {gamma.shape[0]} parameters")
    bshape = [1] * x.ndim
    bshape[ax] = x.shape[ax]
    mu = x.data.mean(axis=red, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=red, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g_ = gamma.data.reshape(bshape)
    out = xhat * g_ + beta.data.reshape(bshape)

    def backward(g):
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gx = None
        if x.requires_grad:
            gm = gb.reshape(bshape) / m
            gxm = gg.reshape(bshape) / m
            gx = (g_ * inv) * (g - gm - xhat * gxm)
        return gx, gg, gb

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def upsample_bilinear(x, size):
    """Bilinear resize of the last two axes (half-pixel centres, edge clamped)."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    oh, ow = size
    ah = _interp_matrix(h, oh).astype(x.dtype)
    aw = _interp_matrix(w, ow).astype(x.dtype)
    out = ah @ x.data @ aw.T

    def backward(g):
        return (ah.T @ g @ aw,)

    return _make(out, (x,), backward)


def _interp_matrix(n_in, n_out):
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        f = src - i0
        m[i, i0] += 1.0 - f
        m[i, i1] += f
    return m


# -- spikes -----------------------------------------------------------------
def heaviside(x, threshold, surrogate=SurrogateSpec()):
    """Binary spike ``x >= threshold`` with a surrogate backward pass.

    ``threshold`` may be a scalar or a tensor broadcastable to ``x``; gradients
    reach it with the opposite sign.
    """
    x = as_tensor(x)
    thr = threshold if isinstance(threshold, Tensor) else None
    thr_data = thr.data if thr is not None else np.asarray(threshold, dtype=x.dtype)
    v = x.data - thr_data
    out = (v >= 0).astype(x.dtype)

    def backward(g):
        sg = g * surrogate.grad(v).astype(g.dtype)
        gt = None
        if thr is not None and thr.requires_grad:
            gt = unbroadcast(-sg, thr.shape)
        return unbroadcast(sg, x.shape), gt

    if thr is None:
        return _make(out, (x,), lambda g: backward(g)[:1])
    return _make(out, (x, thr), backward)


def lif_sequence(x, tau=2.0, v_threshold=0.1, v_reset=0.0, surrogate=SurrogateSpec(), detach_reset=False):
    """Hard-reset LIF over the leading time axis, fused into one graph node."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[0] == 0:
        raise ShapeError("lif_sequence needs a non-empty leading time axis")
    shape = x.shape
    flat = np.ascontiguousarray(x.data.reshape(shape[0], -1))
    h, s = kernels.lif_forward(flat, float(tau), float(v_threshold), float(v_reset))

    def backward(g):
        gs = np.ascontiguousarray(g.reshape(shape[0], -1))
        gx = kernels.lif_backward(
            gs, h, s, float(tau), float(v_threshold), float(v_reset),
            float(surrogate.width), bool(detach_reset),
        )
        return (gx.reshape(shape),)

    return _make(s.reshape(shape), (x,), backward)
