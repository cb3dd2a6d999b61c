"""Pure-numpy versions of the compiled kernels.

Used when the Cython extension is unavailable or ``SSCD_PURE_PYTHON`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def correlation_forward(f1, f2, max_disp):
    n, c, h, w = f1.shape
    d = 2 * max_disp + 1
    out = np.zeros((n, d * d, h, w), dtype=f1.dtype)
    for dy in range(-max_disp, max_disp + 1):
        y0, y1 = max(0, -dy), min(h, h - dy)
        for dx in range(-max_disp, max_disp + 1):
            x0, x1 = max(0, -dx), min(w, w - dx)
            if y0 >= y1 or x0 >= x1:
                continue
            k = (dy + max_disp) * d + (dx + max_disp)
            a = f1[:, :, y0:y1, x0:x1]
            b = f2[:, :, y0 + dy:y1 + dy, x0 + dx:x1 + dx]
            out[:, k, y0:y1, x0:x1] = np.einsum("nchw,nchw->nhw", a, b) / c
    return out


def correlation_backward(grad, f1, f2, max_disp):
    n, c, h, w = f1.shape
    d = 2 * max_disp + 1
    g1 = np.zeros_like(f1)
    g2 = np.zeros_like(f2)
    for dy in range(-max_disp, max_disp + 1):
        y0, y1 = max(0, -dy), min(h, h - dy)
        for dx in range(-max_disp, max_disp + 1):
            x0, x1 = max(0, -dx), min(w, w - dx)
            if y0 >= y1 or x0 >= x1:
                continue
            k = (dy + max_disp) * d + (dx + max_disp)
            go = grad[:, k:k + 1, y0:y1, x0:x1] / c
            g1[:, :, y0:y1, x0:x1] += go * f2[:, :, y0 + dy:y1 + dy, x0 + dx:x1 + dx]
            g2[:, :, y0 + dy:y1 + dy, x0 + dx:x1 + dx] += go * f1[:, :, y0:y1, x0:x1]
    return g1, g2


def im2row(x, kh, kw, stride, pad):
    """x is NHWC; returns (N*Ho*Wo, kh*kw*C) patch rows."""
    n, c = x.shape[0], x.shape[3]
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1:3]
    # (n, ho, wo, c, kh, kw) -> (n, ho, wo, kh, kw, c)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)


def row2im(rows, n, h, w, c, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    rows = rows.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=rows.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += rows[:, :, :, i, j]
    if pad:
        out = out[:, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def maxpool_forward(x, k, stride):
    n, c = x.shape[:2]
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward(grad, arg, h, w, k, stride):
    n, c, ho, wo = grad.shape
    gx = np.zeros((n, c, h, w), dtype=grad.dtype)
    for a in range(k * k):
        i, j = divmod(a, k)
        gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(arg == a, grad, 0)
    return gx
