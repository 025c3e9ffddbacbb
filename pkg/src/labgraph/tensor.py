"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records its inputs and a backward closure on the output tensor.
Tensor ids come from a global counter, so sorting reachable nodes by id
gives a valid topological order of the tape.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

_ids = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    pass


class EmptyActionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "id", "name")
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.id = next(_ids)
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None, wrt=None):
        """Run the tape backwards from this tensor, accumulating into ``.grad``.

        With ``wrt`` given, only those leaf tensors receive gradients.
        """
        only = None if wrt is None else {t.id for t in wrt}
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo(self)
        grads = {self.id: np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad and (only is None or node.id in only):
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _topo(root):
    seen = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        stack.extend(p for p in node._parents if p.requires_grad)
    return sorted(seen.values(), key=lambda n: n.id, reverse=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a, p: float):
    a = as_tensor(a)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: inner dims differ ({a.shape} @ {b.shape})")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        if a.ndim == 1:
            ga = np.matmul(b.data, g[..., None])[..., 0] if g.ndim else b.data @ g
            gb = np.multiply.outer(a.data, g)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def max_over_axis(a, axis):
    """Max along ``axis``; the gradient goes to the first maximising entry."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (ga,)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------- elementwise

def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp_min(a, floor: float):
    a = as_tensor(a)
    keep = a.data > floor
    return _make(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


def spmm(matrix, a):
    """Constant (possibly scipy-sparse) matrix times a dense tensor."""
    a = as_tensor(a)
    out = np.asarray(matrix @ a.data)
    return _make(out, (a,), lambda g: (np.asarray(matrix.T @ g),))


def softplus(a):
    """log(1 + e^x), stable for large |x|."""
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (g * _sigmoid(a.data),))


def log_sigmoid(a):
    return -softplus(-as_tensor(a))


ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(name: str, x):
    return ELEMENTWISE[name](x)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i, j):
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, backward)


def index(a, idx):
    """Basic or fancy indexing; gradients scatter-add back into the source."""
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(np.array(out, copy=True), (a,), backward)


def take_rows(a, rows):
    """a[rows] for an integer array of any shape; rows index axis 0."""
    return index(a, np.asarray(rows, dtype=np.intp))


def pad1d(a, left: int, right: int):
    """Zero-pad the last axis."""
    a = as_tensor(a)
    widths = [(0, 0)] * (a.ndim - 1) + [(left, right)]
    out = np.pad(a.data, widths)
    n = a.shape[-1]
    return _make(out, (a,), lambda g: (g[..., left:left + n].copy(),))


# ---------------------------------------------------------------- composite ops

def softmax_masked(logits, mask, axis=-1):
    """Softmax over entries where ``mask`` is true; masked entries get exactly 0."""
    logits = as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=axis).all():
        raise EmptyActionError("softmax_masked: a slice has no valid entries")
    shifted = np.where(mask, logits.data, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (logits,), backward)


def conv1d(x, kernel, bias=None):
    """Valid cross-correlation, stride 1.

    x: [channels, length] or [batch, channels, length]; kernel: [out, in, width].
    Windows are unfolded (im2col) and contracted with the kernel in one matmul.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if kernel.ndim != 3:
        raise DimensionError(f"conv1d: kernel must be [out, in, width], got axes {kernel.shape}")
    n_out, n_in, width = kernel.shape
    if xd.shape[1] != n_in:
        raise DimensionError(
            f"conv1d: input channel axis has {xd.shape[1]} but kernel in-axis has {n_in}")
    length = xd.shape[2]
    if width > length:
        raise DimensionError(f"conv1d: kernel width axis {width} exceeds input length axis {length}")
    lo = length - width + 1
    kd = kernel.data
    b = xd.shape[0]
    # cols[b, t, i*width + w] = x[b, i, t + w]
    cols = np.lib.stride_tricks.sliding_window_view(xd, width, axis=2).transpose(0, 2, 1, 3)
    cols = cols.reshape(b * lo, n_in * width)
    kmat = kd.reshape(n_out, n_in * width)
    out = (cols @ kmat.T).reshape(b, lo, n_out).transpose(0, 2, 1)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out[0] if squeeze else out)

    def backward(g):
        gd = g[None] if squeeze else g
        gflat = gd.transpose(0, 2, 1).reshape(b * lo, n_out)
        gk = (gflat.T @ cols).reshape(n_out, n_in, width)
        gcols = (gflat @ kmat).reshape(b, lo, n_in, width)
        gx = np.zeros_like(xd)
        for w in range(width):
            gx[:, :, w:w + lo] += gcols[:, :, :, w].transpose(0, 2, 1)
        grads = [gx[0] if squeeze else gx, gk]
        if bias is not None:
            grads.append(gd.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward)


def lstm_cell(x_t, h_prev, c_prev, params):
    """Standard four-gate LSTM step.

    params: dict with w_ih [4h, d_in], w_hh [4h, h], b [4h]; gate order i, f, g, o.
    Inputs may carry a leading batch axis.
    """
    z = matmul(x_t, transpose(params["w_ih"])) + matmul(h_prev, transpose(params["w_hh"])) + params["b"]
    hdim = h_prev.shape[-1]
    i = sigmoid(z[..., 0:hdim])
    f = sigmoid(z[..., hdim:2 * hdim])
    g = tanh(z[..., 2 * hdim:3 * hdim])
    o = sigmoid(z[..., 3 * hdim:4 * hdim])
    c_t = f * c_prev + i * g
    h_t = o * tanh(c_t)
    return h_t, c_t


# ---------------------------------------------------------------- checking

def grad_check(f, params, eps: float = 1e-6):
    """Max over all parameter entries of |analytic - numeric| / max(1, |numeric|).

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params``. Central differences are taken in place on each parameter.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    for p in params:
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: f is not finite at the evaluation point")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            with no_grad():
                up = float(f().data)
            flat[k] = orig - eps
            with no_grad():
                down = float(f().data)
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("grad_check: f is not finite near the evaluation point")
            numeric = (up - down) / (2 * eps)
            err = abs(analytic.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
