"""The closed operator set used by the DK/Conformer/EINv2/ACCDOA models.

Broadcasting is supported only in the form needed for bias addition and
channel-wise scaling: the smaller operand's gradient is summed back over
the broadcast axes.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, as_tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    a = as_tensor(a)
    b = _lift(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    sa, sb = a.shape, b.shape
    return Tensor.from_op(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor):
        b = _lift(b, a)
    else:
        a = _lift(a, b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    sa, sb = a.shape, b.shape
    return Tensor.from_op(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    a = as_tensor(a)
    b = _lift(b, a)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor.from_op(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid(x.data)
    xd = x.data
    return Tensor.from_op(xd * s, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor.from_op(t, (x,), lambda g: (g * (1.0 - t * t),))


def glu(x: Tensor, axis: int) -> Tensor:
    """Gated linear unit: first half * sigmoid(second half) along ``axis``."""
    axis = _check_axis(axis, x.ndim)
    n = x.shape[axis]
    if n % 2:
        raise DimensionError(f"glu needs an even size along axis {axis}, got {n}")
    a, b = np.split(x.data, 2, axis=axis)
    s = _sigmoid(b)

    def backward(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=axis),)

    return Tensor.from_op(a * s, (x,), backward)


# reductions and shape ops ------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor.from_op(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for ax in axes:
            _check_axis(ax, x.ndim)
        n = int(np.prod([x.shape[ax] for ax in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for {x.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(np.array(x.data[idx]), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    axis = _check_axis(axis, xs[0].ndim)
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    splits = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return Tensor.from_op(out, xs, lambda g: tuple(np.split(g, splits, axis=axis)))


def pad_channels(x: Tensor, total: int) -> Tensor:
    """Zero-pad axis 1 up to ``total`` channels."""
    extra = total - x.shape[1]
    if extra < 0:
        raise DimensionError(f"cannot pad {x.shape[1]} channels down to {total}")
    if extra == 0:
        return x
    zeros = Tensor(np.zeros((x.shape[0], extra) + x.shape[2:], dtype=x.dtype))
    return concat([x, zeros], axis=1)


# linear algebra -------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor.from_op(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x W^T + b with W of shape (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear expects last dim {weight.shape[1]}, got {x.shape[-1]}")
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ wd.T).reshape(lead + (wd.shape[0],))
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd).reshape(xd.shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, backward)


# normalisation ----------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(s, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply per-feature affine."""
    if gain.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm gain shape {gain.shape} vs features {x.shape[-1]}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    d = xd.shape[-1]
    lead_axes = tuple(range(xd.ndim - 1))

    def backward(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead_axes), g.sum(axis=lead_axes)

    del d
    return Tensor.from_op(out, (x, gain, bias), backward)


def batch_norm(x: Tensor, gain: Tensor, bias: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Normalise channel axis 1 over all other axes.

    In training mode the batch statistics are used and the running buffers
    are updated in place; otherwise the running buffers are used.
    """
    xd = x.data
    c = xd.shape[1]
    if gain.shape != (c,):
        raise DimensionError(f"batch_norm expects {gain.shape[0]} channels, got {c}")
    axes = (0,) + tuple(range(2, xd.ndim))
    bshape = (1, c) + (1,) * (xd.ndim - 2)
    gd = gain.data.reshape(bshape)
    if training:
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        n = xd.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(c) * (n / max(n - 1, 1))
    else:
        mu = running_mean.reshape(bshape).astype(xd.dtype)
        xc = xd - mu
        var = running_var.reshape(bshape).astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gd + bias.data.reshape(bshape)

    def backward(g):
        gxhat = g * gd
        if training:
            gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor.from_op(out, (x, gain, bias), backward)


# convolution and pooling --------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, dilation=1,
           padding="same") -> Tensor:
    """Dilated 2-D cross-correlation, stride 1.

    ``padding="same"`` keeps the T x F extent (requires odd kernels);
    an int or pair gives explicit symmetric zero padding.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape}, {weight.shape}")
    b, c, t, f = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d kernel expects {ci} input channels, got {c}")
    dh, dw = _pair(dilation)
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise DimensionError("same padding needs odd kernel sizes")
        ph, pw = dh * (kh - 1) // 2, dw * (kw - 1) // 2
    else:
        ph, pw = _pair(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    to = t + 2 * ph - dh * (kh - 1)
    fo = f + 2 * pw - dw * (kw - 1)
    if to < 1 or fo < 1:
        raise DimensionError("conv2d output would be empty")
    cols = np.empty((b, to, fo, c, kh, kw), dtype=xp.dtype)
    xpt = xp.transpose(0, 2, 3, 1)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, :, i, j] = xpt[:, i * dh:i * dh + to, j * dw:j * dw + fo, :]
    colmat = cols.reshape(b * to * fo, c * kh * kw)
    wmat = weight.data.reshape(co, -1)
    out = colmat @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(b, to, fo, co).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gw = (gmat.T @ colmat).reshape(weight.shape)
        dcols = (gmat @ wmat).reshape(b, to, fo, c, kh, kw)
        gxp = np.zeros((b, t + 2 * ph, f + 2 * pw, c), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i * dh:i * dh + to, j * dw:j * dw + fo, :] += dcols[:, :, :, :, i, j]
        gx = gxp[:, ph:ph + t, pw:pw + f, :].transpose(0, 3, 1, 2)
        if bias is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(np.ascontiguousarray(out), parents, backward)


def depthwise_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 1-D convolution over the last axis of B x D x T, same padding."""
    b, d, t = x.shape
    if weight.shape[0] != d:
        raise DimensionError(f"depthwise kernel has {weight.shape[0]} channels, input {d}")
    k = weight.shape[1]
    if k % 2 == 0:
        raise DimensionError("depthwise conv needs an odd kernel")
    p = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p)))
    wd = weight.data
    out = np.zeros((b, d, t), dtype=xp.dtype)
    for i in range(k):
        out += wd[:, i][None, :, None] * xp[:, :, i:i + t]
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for i in range(k):
            gxp[:, :, i:i + t] += wd[:, i][None, :, None] * g
            gw[:, i] = (g * xp[:, :, i:i + t]).sum(axis=(0, 2))
        gx = gxp[:, :, p:p + t]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


def avg_pool2d(x: Tensor, kernel) -> Tensor:
    """Non-overlapping average pooling over the last two axes."""
    kt, kf = _pair(kernel)
    b, c, t, f = x.shape
    if t % kt or f % kf:
        raise DimensionError(f"pool {kt}x{kf} does not tile input {t}x{f}")
    out = x.data.reshape(b, c, t // kt, kt, f // kf, kf).mean(axis=(3, 5))
    scale = 1.0 / (kt * kf)

    def backward(g):
        g6 = np.broadcast_to(g[:, :, :, None, :, None] * scale, (b, c, t // kt, kt, f // kf, kf))
        return (g6.reshape(b, c, t, f),)

    return Tensor.from_op(out, (x,), backward)


def global_avg_pool_tf(x: Tensor) -> Tensor:
    """B x C x T x F -> B x C channel descriptor (mean over time and frequency)."""
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise DimensionError(f"expected non-empty B x C x T x F input, got {x.shape}")
    return mean(x, axis=(2, 3))


# losses -----------------------------------------------------------------------------

def mse(pred: Tensor, target) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size
    return Tensor.from_op(np.asarray((diff * diff).sum() / n), (pred,),
                          lambda g: (g * 2.0 * diff / n,))
