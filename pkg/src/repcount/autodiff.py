"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation creates a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
Node ids are handed out in creation order, which is a topological order of
the graph, so :class:`Tape` only needs to sort reachable nodes by id and walk
them backwards.

Leading ("batch") axes broadcast in the numpy sense for the elementwise ops
and for :func:`matmul`; gradients are summed back to the operand shape.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError

_ids = itertools.count()
_grad_enabled = True

COSINE_NORM_FLOOR = 1e-12


@contextmanager
def no_grad():
    """Evaluate without recording the graph (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An immutable float64 array that can take part in backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf", _copy=True):
        arr = np.array(data, dtype=np.float64, copy=True) if _copy else np.asarray(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._id = next(_ids)
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return np.array(self.data)

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return self.shape[0]

    def grad_or_zeros(self):
        return np.zeros(self.shape) if self.grad is None else self.grad

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        Tape.from_output(self).backward(grad)

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
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

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

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    """Wrap an op result, recording the graph only when it matters."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, op=op, _copy=False)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op, _copy=False)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of the differentiable operations behind one output."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        seen = {}
        stack = [out]
        while stack:
            node = stack.pop()
            if node._id in seen or not node.requires_grad:
                continue
            seen[node._id] = node
            stack.extend(node._parents)
        return cls([seen[k] for k in sorted(seen)])

    def backward(self, grad=None):
        if not self.nodes:
            return
        out = self.nodes[-1]
        if grad is None:
            if out.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones(out.shape)
        grads = {out._id: np.asarray(grad, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def scale(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if np.any(a.data <= 0):
        raise DegenerateInputError("log of a non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def amax(a, axis=None):
    """Max reduction; the gradient goes to the first maximiser."""
    return _arg_reduce(a, axis, np.argmax, "max")


def amin(a, axis=None):
    return _arg_reduce(a, axis, np.argmin, "min")


def _arg_reduce(a, axis, argfn, op):
    if axis is None:
        flat = argfn(a.data.reshape(-1))
        out = a.data.reshape(-1)[flat]

        def back(g):
            full = np.zeros(a.size)
            full[flat] = g
            return (full.reshape(a.shape),)

        return _make(out, (a,), back, op)
    idx = np.expand_dims(argfn(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis).squeeze(axis)

    def back(g):
        full = np.zeros(a.shape)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis)
        return (full,)

    return _make(out, (a,), back, op)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(a, idx):
    def back(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), back, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
        "concat",
    )


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return _make(
        np.stack([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


# ---------------------------------------------------------------------------
# linear algebra and normalisation
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes, batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with >= 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from exc

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _make(out, (a, b), back, "matmul")


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add(y, b)


def softmax(a, axis=-1):
    """Softmax along ``axis`` after subtracting the max (no overflow)."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), back, "softmax")


def softmax_rows(a):
    if not np.all(np.isfinite(a.data)):
        raise DegenerateInputError("softmax of non-finite input")
    return softmax(a, axis=-1)


def logsumexp(a, axis=-1):
    m = a.data.max(axis=axis, keepdims=True)
    s = np.exp(a.data - m)
    tot = s.sum(axis=axis, keepdims=True)
    out = (np.log(tot) + m).squeeze(axis)
    w = s / tot
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * w,), "logsumexp")


def layer_norm(x, gain, bias, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        gxhat = g * gain.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return (gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape))

    return _make(out, (x, gain, bias), back, "layer_norm")


def cosine_sim(a, b):
    """Cosine similarity along the last axis; leading axes broadcast.

    Raises :class:`DegenerateInputError` if either side has (near) zero norm.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"cosine_sim dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a.data, axis=-1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=-1, keepdims=True)
    if np.any(na < COSINE_NORM_FLOOR) or np.any(nb < COSINE_NORM_FLOOR):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    dot = (a.data * b.data).sum(axis=-1, keepdims=True)
    cos = dot / (na * nb)

    def back(g):
        g = g[..., None]
        ga = g * (b.data / (na * nb) - cos * a.data / na**2)
        gb = g * (a.data / (na * nb) - cos * b.data / nb**2)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(cos[..., 0], (a, b), back, "cosine_sim")


# ---------------------------------------------------------------------------
# convolutions (same padding by edge replication)
# ---------------------------------------------------------------------------

def _edge_index(n, k):
    half = k // 2
    return np.clip(np.arange(n)[:, None] + np.arange(k)[None, :] - half, 0, n - 1)


def conv1d_temporal(x, w, b):
    """Temporal convolution ``(..., L, Din) -> (..., L, Dout)``.

    ``w`` has shape ``(k, Din, Dout)`` with odd ``k``; out-of-range frames
    repeat the nearest edge frame.
    """
    k, din, dout = w.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_temporal needs an odd kernel width, got {k}")
    if x.shape[-1] != din or b.shape != (dout,):
        raise ShapeError(f"conv1d_temporal shapes disagree: x {x.shape}, w {w.shape}, b {b.shape}")
    L = x.shape[-2]
    idx = _edge_index(L, k)
    win = x.data[..., idx, :]  # (..., L, k, Din)
    out = np.tensordot(win, w.data, axes=([-2, -1], [0, 1])) + b.data

    def back(g):
        gw = np.tensordot(win, g, axes=(list(range(win.ndim - 3)) + [win.ndim - 3],
                                        list(range(g.ndim - 1)))) if w.requires_grad else None
        gb = g.reshape(-1, dout).sum(axis=0)
        gx = None
        if x.requires_grad:
            gwin = np.tensordot(g, w.data, axes=([-1], [2]))  # (..., L, k, Din)
            gx = np.zeros(x.shape)
            for j in range(k):
                np.add.at(gx, (Ellipsis, idx[:, j], slice(None)), gwin[..., j, :])
        return (gx, gw, gb)

    return _make(out, (x, w, b), back, "conv1d_temporal")


def _fold_edge_pad(gpad, pad, axis):
    """Reverse of ``np.pad(mode='edge')`` for gradients along one axis.

    Accumulates into ``gpad`` in place and returns a view of its interior.
    """
    if pad == 0:
        return gpad
    n = gpad.shape[axis] - 2 * pad

    def sl(a, b):
        idx = [slice(None)] * gpad.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    gpad[sl(pad, pad + 1)] += gpad[sl(0, pad)].sum(axis=axis, keepdims=True)
    gpad[sl(pad + n - 1, pad + n)] += gpad[sl(pad + n, n + 2 * pad)].sum(axis=axis, keepdims=True)
    return gpad[sl(pad, pad + n)]


def conv2d(x, w, b):
    """2-D convolution ``(..., C, H, W) -> (..., Cout, H, W)``, odd kernels.

    The edge-padded input is laid out as ``(C, N*Hp*Wp)``. A kernel tap
    ``(i, j)`` is then a fixed column offset ``i*Wp + j``, so every tap is a
    single ``(Cout, C) @ (C, M)`` product on a strided view with no copy.
    Outputs land on the padded grid and the border columns are dropped.
    """
    cout, cin, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d needs odd kernel sizes, got {kh}x{kw}")
    if x.ndim < 3 or x.shape[-3] != cin or b.shape != (cout,):
        raise ShapeError(f"conv2d shapes disagree: x {x.shape}, w {w.shape}, b {b.shape}")
    ph, pw = kh // 2, kw // 2
    lead = x.shape[:-3]
    H, W = x.shape[-2:]
    Hp, Wp = H + 2 * ph, W + 2 * pw
    xc = x.data.reshape((-1, cin, H, W)).transpose(1, 0, 2, 3)  # (C, N, H, W)
    n = xc.shape[1]
    flat = np.pad(xc, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="edge").reshape(cin, -1)
    total = flat.shape[1]
    M = total - (kh - 1) * Wp - (kw - 1)
    offsets = [(i, j, i * Wp + j) for i in range(kh) for j in range(kw)]
    # contiguous per-tap weights keep matmul on the BLAS path
    wk = np.ascontiguousarray(w.data.transpose(2, 3, 0, 1))  # (kh, kw, Cout, C)
    grid = np.zeros((cout, total))
    out = grid[:, :M]
    for i, j, o in offsets:
        out += wk[i, j] @ flat[:, o:o + M]
    y = grid.reshape(cout, n, Hp, Wp)[:, :, :H, :W].transpose(1, 0, 2, 3) + b.data[:, None, None]

    def back(g):
        gg = np.zeros((cout, n, Hp, Wp))
        gg[:, :, :H, :W] = g.reshape((n, cout, H, W)).transpose(1, 0, 2, 3)
        gq = gg.reshape(cout, -1)[:, :M]
        gb = g.reshape((n, cout, H * W)).sum(axis=(0, 2))
        gw = None
        if w.requires_grad:
            gw = np.empty(w.shape)
            for i, j, o in offsets:
                gw[:, :, i, j] = gq @ flat[:, o:o + M].T
        gx = None
        if x.requires_grad:
            # one product for all taps, then shifted adds
            z = (w.data.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout) @ gq).reshape(kh * kw, cin, M)
            gp = np.zeros((cin, total))
            for t, (_, _, o) in enumerate(offsets):
                gp[:, o:o + M] += z[t]
            gp = _fold_edge_pad(_fold_edge_pad(gp.reshape(cin, n, Hp, Wp), ph, 2), pw, 3)
            gx = gp.transpose(1, 0, 2, 3).reshape(x.shape)
        return (gx, gw, gb)

    return _make(y.reshape(lead + (cout, H, W)), (x, w, b), back, "conv2d")


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def numerical_grad(f, theta, eps=1e-5):
    """Central-difference gradient of scalar ``f(ndarray)`` at ``theta``."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(theta))
        flat[i] = orig - eps
        fm = float(f(theta))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def analytic_grad(f, theta):
    t = Tensor(theta, requires_grad=True)
    out = f(t)
    out.backward()
    return t.grad_or_zeros()


def grad_check(f, theta, eps=1e-5):
    """Max over coordinates of ``|analytic - fd| / max(1, |fd|)``.

    ``f`` maps a Tensor to a scalar Tensor; it is called on plain Tensors
    for the finite differences.
    """
    theta = np.array(theta, dtype=np.float64)
    ana = analytic_grad(f, theta)
    with no_grad():
        fd = numerical_grad(lambda th: f(Tensor(th)).item(), theta, eps)
    return float(np.max(np.abs(ana - fd) / np.maximum(1.0, np.abs(fd)))) if fd.size else 0.0
