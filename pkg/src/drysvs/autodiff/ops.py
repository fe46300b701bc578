"""Differentiable operations on channel-last arrays.

Image-like tensors are (batch, time, freq, channels); sequences are
(batch, time, channels). Convolutions use stride 1 and same padding.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad * bd, (a, b), backward)


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_node(np.mean(x.data), (x,),
                     lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    # 1 where x > 0, else slope (np.where with scalar branches is slow)
    deriv = (x.data > 0).astype(x.dtype)
    deriv *= 1.0 - slope
    deriv += slope
    return make_node(x.data * deriv, (x,), lambda g: (g * deriv,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def mae(a, b) -> Tensor:
    """Mean absolute error; the subgradient at a == b is 0."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    if a.shape != b.shape:
        raise ShapeError(f"mae shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return make_node(np.mean(np.abs(diff)), (a, b), backward)


def binary_cross_entropy(p: Tensor, target, eps: float = 1e-7) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=p.dtype)
    if p.shape != t.shape:
        raise ShapeError(f"bce shape mismatch: {p.shape} vs {t.shape}")
    pc = np.clip(p.data, eps, 1.0 - eps)
    n = pc.size
    loss = -np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))
    inside = (p.data > eps) & (p.data < 1.0 - eps)

    def backward(g):
        return (g / n) * (pc - t) / (pc * (1.0 - pc)) * inside, None

    return make_node(loss, (p, _lift(t)), backward)


# -- shape ops -------------------------------------------------------------

def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        other = tuple(s for i, s in enumerate(t.shape) if i != ax)
        ref = tuple(s for i, s in enumerate(tensors[0].shape) if i != ax)
        if other != ref:
            raise ShapeError(f"concat shape mismatch: {tensors[0].shape} vs {t.shape}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return make_node(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return make_node(x.data[index], (x,), backward)


def pad(x: Tensor, widths) -> Tensor:
    """Zero-pad; `widths` follows numpy.pad."""
    widths = [tuple(w) for w in widths]
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
    return make_node(np.pad(x.data, widths), (x,), lambda g: (g[index],))


def avgpool2(x: Tensor) -> Tensor:
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2 needs even time/freq sizes, got {x.shape}")
    out = x.data.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(g):
        g4 = np.repeat(np.repeat(g * 0.25, 2, axis=1), 2, axis=2)
        return (g4.astype(x.dtype, copy=False),)

    return make_node(out, (x,), backward)


def upsample2(x: Tensor) -> Tensor:
    b, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return make_node(out, (x,),
                     lambda g: (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),))


# -- convolution -----------------------------------------------------------

def _im2col2d(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, H, W, C) -> (B*H*W, kh*kw*C) patches, rows ordered (kh, kw, C)."""
    b, h, w, c = x.shape
    if kh == 1 and kw == 1:
        return x.reshape(b * h * w, c)
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # B, H, W, C, kh, kw
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 2-D convolution (cross-correlation).

    x: (B, H, W, Cin); weight: (k, k, Cin, Cout) with odd k; bias: (Cout,).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    kh, kw, cin, cout = weight.shape
    b, h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d needs odd kernel sizes, got {weight.shape}")
    w2 = weight.data.reshape(kh * kw * cin, cout)
    cols = _im2col2d(x.data, kh, kw)
    out = cols @ w2
    if bias is not None:
        out += bias.data
    out = out.reshape(b, h, w, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = None
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(weight.shape)
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            # correlation with the spatially flipped, channel-transposed kernel
            wt = weight.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
            gx = (_im2col2d(g, kh, kw) @ wt).reshape(x.shape)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_node(out, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 1-D convolution.

    x: (B, T, Cin); weight: (k, Cin, Cout) with odd k; bias: (Cout,).
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D input and kernel, got {x.shape} and {weight.shape}")
    k, cin, cout = weight.shape
    b, t, c = x.shape
    if c != cin:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape}, kernel {weight.shape}")
    if k % 2 == 0:
        raise ShapeError(f"conv1d needs an odd kernel size, got {weight.shape}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (0, 0)))
    cols = sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2).reshape(b * t, k * cin)
    w2 = weight.data.reshape(k * cin, cout)
    out = cols @ w2
    if bias is not None:
        out += bias.data
    out = out.reshape(b, t, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gc = (g2 @ w2.T).reshape(b, t, k, cin)
            gxp = np.zeros((b, t + k - 1, cin), dtype=gc.dtype)
            for i in range(k):
                gxp[:, i:i + t, :] += gc[:, :, i, :]
            gx = gxp[:, p:p + t, :]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_node(out, parents, backward)


# -- normalization ---------------------------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.9,
              eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over every axis but the last.

    In training mode the running statistics are updated in place:
    running = momentum * running + (1 - momentum) * batch.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm expects ({c},) scale/shift, got {gamma.shape}, {beta.shape}")
    x2 = x.data.reshape(-1, c)
    n = x2.shape[0]
    # column sums as mat-vec products: much faster than axis reductions here
    ones = np.ones(n, dtype=x.dtype)
    if training:
        mu = (ones @ x2) / n
        xc = x2 - mu
        var = (ones @ (xc * xc)) / n
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        xhat = xc
        xhat *= inv_std
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var * (n / max(n - 1, 1))
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x2 - running_mean) * inv_std
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def backward(g):
        g2 = g.reshape(-1, c)
        sg = ones @ g2
        sgx = ones @ (g2 * xhat)
        gx = None
        if x.requires_grad:
            scale = gamma.data * inv_std
            if training:
                gx = g2 - sg / n
                gx -= xhat * (sgx / n)
                gx *= scale
            else:
                gx = g2 * scale
            gx = gx.reshape(x.shape)
        return gx, (sgx if gamma.requires_grad else None), (sg if beta.requires_grad else None)

    return make_node(out, (x, gamma, beta), backward)


__all__ = [
    "Tensor", "as_tensor", "add", "sub", "mul", "tsum", "mean", "leaky_relu", "sigmoid",
    "mae", "binary_cross_entropy", "concat", "getitem", "pad", "avgpool2", "upsample2",
    "conv2d", "conv1d", "batchnorm",
]
