"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records its parents and a closure that pushes the output gradient
back to them. ``backward`` replays the closures in reverse creation order,
which is a valid topological order because a node can only be created after
its inputs.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from . import kernels

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names the dimension."""


@contextmanager
def no_grad():
    """Disable graph recording (inference, evaluation, oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self.op = _op
        self._parents = _parents
        self._backward = None

    # -- basics -----------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # -- operators --------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward_fn):
    parents = tuple(parents)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    # out-of-place so that g may alias upstream buffers; backward() copies leaf grads
    t.grad = g if t.grad is None else t.grad + g


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss):
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any tensor that requires grad")
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        stack.extend(t._parents)
    order = sorted(nodes.values(), key=lambda t: t.node_id, reverse=True)
    prior = {}
    for t in order:
        if t._parents:
            t.grad = None
        elif t.grad is not None:
            prior[t.node_id] = t.grad
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for t in order:
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)
    # interior grads are scratch; leaves keep an owned copy (plus any earlier grad)
    for t in order:
        if t._parents:
            t.grad = None
        elif t.grad is not None or t.node_id in prior:
            g = np.array(t.grad, dtype=np.float64) if t.grad is not None else 0.0
            t.grad = g + prior[t.node_id] if t.node_id in prior else g


def graph_nodes(root):
    """All nodes reachable from ``root`` in creation order."""
    seen = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node_id in seen:
            continue
        seen[t.node_id] = t
        stack.extend(t._parents)
    return [seen[k] for k in sorted(seen)]


# -- elementwise ------------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, unbroadcast(g, a.shape))
        _accum(b, unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, unbroadcast(g, a.shape))
        _accum(b, unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), "div", bw)


def power(a, p):
    a = as_tensor(a)

    def bw(g):
        _accum(a, g * p * a.data ** (p - 1))

    return _make(a.data ** p, (a,), "pow", bw)


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: _accum(a, g * out))


def log(a):
    return _make(np.log(a.data), (a,), "log", lambda g: _accum(a, g / a.data))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), "sqrt", lambda g: _accum(a, g * 0.5 / out))


def relu(a):
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), "relu", lambda g: _accum(a, g * pos))


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), "sigmoid", lambda g: _accum(a, g * out * (1.0 - out)))


def clip(a, lo, hi):
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), "clip", lambda g: _accum(a, g * inside))


def safe_div(num, den, eps=1e-8):
    """``num / den`` where ``den > eps``, else 0 (also for the gradient)."""
    num, den = as_tensor(num), as_tensor(den)
    ok = den.data > eps
    safe = np.where(ok, den.data, 1.0)
    out = np.where(ok, num.data / safe, 0.0)

    def bw(g):
        if num.requires_grad:
            _accum(num, unbroadcast(np.where(ok, g / safe, 0.0), num.shape))
        if den.requires_grad:
            _accum(den, unbroadcast(np.where(ok, -g * out / safe, 0.0), den.shape))

    return _make(out, (num, den), "safe_div", bw)


# -- shape ------------------------------------------------------------------
def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), "sum", bw)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: _accum(a, g.reshape(a.shape)))


def transpose(a, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), "transpose", lambda g: _accum(a, np.transpose(g, inv)))


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int)) for p in parts)


def getitem(a, idx):
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.data[idx], (a,), "getitem", bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for k, t in enumerate(tensors[1:], 1):
        for d in range(len(ref)):
            if d != axis % len(ref) and t.shape[d] != ref[d]:
                raise ShapeError(f"concat: operand {k} has extent {t.shape[d]} in dim {d}, expected {ref[d]}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimension {a.shape[-1]} != {b.shape[-2]}")

    def bw(g):
        if a.requires_grad:
            _accum(a, unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), "matmul", bw)


# -- vision ops ------------------------------------------------------------
def conv_output_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x[N,C,H,W]`` with ``weight[O,C,kH,kW]``."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D [N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input channel dim is {c} but kernel expects {ci}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} / padding={padding}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias dim is {bias.shape}, expected ({o},)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    xp = np.ascontiguousarray(xp)
    wmat = weight.data.reshape(o, -1)
    out = kernels.conv_forward(xp, wmat, kh, kw, stride)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        dxp, dw = kernels.conv_backward(xp, wmat, gmat, kh, kw, stride,
                                        need_dx=x.requires_grad, need_dw=weight.requires_grad)
        if dw is not None:
            _accum(weight, dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, gmat.sum(axis=1))
        if dxp is not None:
            _accum(x, dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp)

    return _make(np.ascontiguousarray(out), parents, "conv2d", bw)


def bilinear_matrix(n_in, n_out):
    """Row-stochastic (n_out, n_in) interpolation matrix, align_corners=False."""
    r = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        r[o, i0] += 1.0 - lam
        r[o, i1] += lam
    return r


def resize_bilinear(x, out_h, out_w):
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: target extent must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    rh, rw = bilinear_matrix(h, out_h), bilinear_matrix(w, out_w)
    out = rh @ x.data @ rw.T
    return _make(out, (x,), "resize_bilinear", lambda g: _accum(x, rh.T @ g @ rw))


def avg_pool2d(x, k):
    """Non-overlapping ``k x k`` average pooling (H and W divisible by k)."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: spatial size {h}x{w} not divisible by {k}")
    return mean(reshape(x, (n, c, h // k, k, w // k, k)), axis=(3, 5))


def l2_normalize(x, axis=-1, eps=1e-8):
    """``x / max(||x||, eps)`` along ``axis``."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    big = norm > eps
    den = np.where(big, norm, eps)
    y = x.data / den

    def bw(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, np.where(big, (g - y * proj) / den, g / den))

    return _make(y, (x,), "l2_normalize", bw)


def cosine_similarity(a, b, eps=1e-8, axis=-1):
    """dot(a, b) / (max(|a|, eps) * max(|b|, eps)) along ``axis``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[axis] != b.shape[axis]:
        raise ShapeError(f"cosine_similarity: feature dim {a.shape[axis]} != {b.shape[axis]}")
    return tsum(l2_normalize(a, axis, eps) * l2_normalize(b, axis, eps), axis=axis)
