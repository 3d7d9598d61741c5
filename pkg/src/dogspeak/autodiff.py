"""Minimal reverse-mode automatic differentiation over numpy arrays.

A define-by-run tape: every operation records its parents and a closure
that scatters the output gradient back to them.  The primitive set is
exactly what the conversion networks and training criteria need --
elementwise arithmetic, matmul, strided 1-D (de)convolution, reductions,
concat/narrow/pad, and a few stable nonlinearities.  float64 throughout
so finite-difference checks are meaningful.
"""

from __future__ import annotations

import numpy as np


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    # -- graph bookkeeping --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / data)

    return _make(data, (a,), backward)


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    data = 1.0 / a.data

    def backward(g):
        a._accumulate(-g * data * data)

    return _make(data, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward)


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed stably; gradient is sigmoid(a)."""
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def backward(g):
        a._accumulate(g / (1.0 + np.exp(-np.clip(a.data, -500, 500))))

    return _make(data, (a,), backward)


def square(a) -> Tensor:
    return mul(a, a)


# ---------------------------------------------------------------------------
# linear algebra / reductions


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.swapaxes(-1, -2))
        b._accumulate(a.data.swapaxes(-1, -2) @ g)

    return _make(data, (a, b), backward)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.data.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axes, keepdims=keepdims), 1.0 / count)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=axis, keepdims=True))
    data = shift - lse
    soft = np.exp(data)

    def backward(g):
        a._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# shape surgery


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _make(data, tuple(tensors), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return _make(data, (a,), backward)


def pad_last(a, left: int, right: int) -> Tensor:
    """Zero-pad the last (time) axis."""
    a = as_tensor(a)
    pads = [(0, 0)] * (a.data.ndim - 1) + [(left, right)]
    data = np.pad(a.data, pads)

    def backward(g):
        idx = [slice(None)] * g.ndim
        idx[-1] = slice(left, g.shape[-1] - right)
        a._accumulate(g[tuple(idx)])

    return _make(data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# 1-D convolution over (batch, channels, time)


def _time_windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """View of shape (B, C, T_out, K) with windows[b,c,t,k] = x[b,c,t*stride+k]."""
    b, c, t = x.shape
    t_out = (t - kernel) // stride + 1
    sb, sc, st = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(b, c, t_out, kernel), strides=(sb, sc, st * stride, st),
        writeable=False)


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided 1-D convolution (cross-correlation).

    x: (B, C_in, T); weight: (C_out, C_in, K); output (B, C_out, T_out)
    with T_out = floor((T + 2*padding - K) / stride) + 1.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    b_, c_in, t_in = x.data.shape
    c_out, c_in_w, k = weight.data.shape
    if c_in != c_in_w:
        raise ValueError(f"input channels {c_in} do not match weight {c_in_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    if xp.shape[2] < k:
        raise ValueError(f"kernel {k} longer than padded input {xp.shape[2]}")
    windows = _time_windows(xp, k, stride)
    data = np.einsum("bctk,ock->bot", windows, weight.data)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        data = data + bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        gw = np.einsum("bot,bctk->ock", g, windows)
        weight._accumulate(gw)
        contrib = np.einsum("bot,ock->bctk", g, weight.data)
        gxp = np.zeros_like(xp)
        t_out = g.shape[2]
        for kk in range(k):
            gxp[:, :, kk:kk + stride * t_out:stride] += contrib[:, :, :, kk]
        if padding:
            gxp = gxp[:, :, padding:gxp.shape[2] - padding]
        x._accumulate(gxp)
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2)))

    return _make(data, tuple(parents), backward)


def conv1d_transpose(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Transposed 1-D convolution (upsampling).

    x: (B, C_in, T); weight: (C_in, C_out, K); output (B, C_out, T_up)
    with T_up = (T - 1) * stride + K.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    b_, c_in, t_in = x.data.shape
    c_in_w, c_out, k = weight.data.shape
    if c_in != c_in_w:
        raise ValueError(f"input channels {c_in} do not match weight {c_in_w}")
    t_up = (t_in - 1) * stride + k
    data = np.zeros((b_, c_out, t_up))
    for kk in range(k):
        data[:, :, kk:kk + stride * (t_in - 1) + 1:stride] += np.einsum(
            "bct,co->bot", x.data, weight.data[:, :, kk])
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        data = data + bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        windows = _time_windows(g, k, stride)  # (B, C_out, T, K)
        x._accumulate(np.einsum("botk,cok->bct", windows, weight.data))
        weight._accumulate(np.einsum("bct,botk->cok", x.data, windows))
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2)))

    return _make(data, tuple(parents), backward)
