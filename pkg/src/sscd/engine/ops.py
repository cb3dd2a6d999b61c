"""Differentiable layer primitives on NCHW tensors."""

import numpy as np

from .. import kernels
from .tensor import ShapeError, Tensor, track


def add(a, b):
    if not isinstance(b, Tensor):
        return track(a.data + np.asarray(b, dtype=a.dtype), (a,), lambda g: (g,))
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return track(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b):
    if not isinstance(b, Tensor):
        s = np.asarray(b, dtype=a.dtype)
        return track(a.data * s, (a,), lambda g: (g * s,))
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return track(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def sum(x):
    shape, dtype = x.shape, x.dtype
    return track(np.asarray(x.data.sum(), dtype=dtype), (x,),
                 lambda g: (np.full(shape, g, dtype=dtype),))


def relu(x):
    pos = x.data > 0
    # np.maximum keeps NaN, so divergence upstream stays visible in the loss
    return track(np.maximum(x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * pos,))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation: (N,Cin,H,W) * (Cout,Cin,kh,kw) -> (N,Cout,H',W')."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(
            f"conv2d: input has {cin} channels (shape {x.shape}) but weight expects {wcin} (shape {weight.shape})"
        )
    if stride < 1 or padding < 0 or kh < 1 or kw < 1:
        raise ValueError(f"conv2d: invalid stride={stride} padding={padding} kernel={kh}x{kw}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape} (padding {padding})")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    # patches are gathered from NHWC so each (kh, kw) tap copies a contiguous channel run
    rows = kernels.im2row(x.data.transpose(0, 2, 3, 1), kh, kw, stride, padding)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = rows @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        grows = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        gw = None
        if weight.requires_grad:
            gw = (rows.T @ grows).T.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
            gw = np.ascontiguousarray(gw)
        gx = None
        if x.requires_grad:
            gx = kernels.row2im(grows @ wmat, n, h, w, cin, kh, kw, stride, padding)
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        if bias is None:
            return gx, gw
        gb = grows.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return track(out, inputs, backward)


def max_pool2d(x, k, stride=None):
    stride = k if stride is None else stride
    if k < 1 or stride < 1:
        raise ValueError(f"max_pool2d: invalid k={k} stride={stride}")
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"max_pool2d: window {k}x{k} larger than input {h}x{w}")
    out, arg = kernels.maxpool_forward(x.data, k, stride)
    return track(out, (x,), lambda g: (kernels.maxpool_backward(g, arg, h, w, k, stride),))


def _bilinear_matrix(size, dtype):
    """(2*size, size) interpolation matrix, align_corners=False, edge-clamped."""
    m = np.zeros((2 * size, size), dtype=dtype)
    for o in range(2 * size):
        src = max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = int(np.floor(src))
        frac = src - i0
        i1 = min(i0 + 1, size - 1)
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


def upsample2x(x, mode="nearest"):
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError(f"upsample2x: empty spatial size {x.shape}")
    if mode == "nearest":
        out = x.data.repeat(2, axis=2).repeat(2, axis=3)

        def backward(g):
            return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    elif mode == "bilinear":
        ah = _bilinear_matrix(h, x.dtype)
        aw = _bilinear_matrix(w, x.dtype)
        out = np.matmul(np.matmul(ah, x.data), aw.T)

        def backward(g):
            return (np.matmul(np.matmul(ah.T, g), aw),)

    else:
        raise ValueError(f"upsample2x: unknown mode {mode!r}")
    return track(out, (x,), backward)


def channel_concat(*tensors):
    if not tensors:
        raise ValueError("channel_concat: nothing to concatenate")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"channel_concat: shape {t.shape} incompatible with {ref}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return track(out, tensors, backward)


def channel_slice(x, start, stop):
    c = x.shape[1]
    if not 0 <= start <= stop <= c:
        raise ShapeError(f"channel_slice: [{start}, {stop}) outside {c} channels")
    out = np.ascontiguousarray(x.data[:, start:stop])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return track(out, (x,), backward)


def softmax_array(z, axis=1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_array(z, axis=1):
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def channel_softmax(x):
    if x.data.ndim != 4 or x.shape[1] < 2:
        raise ShapeError(f"channel_softmax: need (N,C>=2,H,W), got {x.shape}")
    p = softmax_array(x.data)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return track(p, (x,), backward)


def correlation2d(f1, f2, max_disp):
    """Cost volume over (2*max_disp+1)**2 displacements, channel-normalized.

    Channel ``(dy+d)*(2d+1) + (dx+d)`` holds mean_c f1[c,y,x] * f2[c,y+dy,x+dx],
    with out-of-bounds f2 samples read as zero.
    """
    if f1.shape != f2.shape:
        raise ShapeError(f"correlation2d: shapes {f1.shape} and {f2.shape} differ")
    if f1.data.ndim != 4:
        raise ShapeError(f"correlation2d: expected 4-D features, got {f1.shape}")
    if max_disp < 0:
        raise ValueError(f"correlation2d: max_disp must be >= 0, got {max_disp}")
    if f1.dtype != f2.dtype:
        raise TypeError(f"correlation2d: dtype mismatch {f1.dtype} vs {f2.dtype}")
    a, b = f1.data, f2.data
    out = kernels.correlation_forward(a, b, max_disp)
    return track(out, (f1, f2), lambda g: kernels.correlation_backward(g, a, b, max_disp))


def batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization; updates running statistics in place when training."""
    n, c, h, w = x.shape
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        count = n * h * w
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean[None, :, None, None].astype(x.dtype)) * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            m = n * h * w
            gx = (inv_std[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv_std[None, :, None, None]
        return gx, gg, gb

    return track(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def batch_concat(*tensors):
    ref = tensors[0].shape[1:]
    for t in tensors[1:]:
        if t.shape[1:] != ref:
            raise ShapeError(f"batch_concat: shape {t.shape} incompatible with {tensors[0].shape}")
    out = np.concatenate([t.data for t in tensors], axis=0)
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return track(out, tensors, backward)


def batch_slice(x, start, stop):
    n = x.shape[0]
    if not 0 <= start <= stop <= n:
        raise ShapeError(f"batch_slice: [{start}, {stop}) outside batch of {n}")
    out = np.ascontiguousarray(x.data[start:stop])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return track(out, (x,), backward)
