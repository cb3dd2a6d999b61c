# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops for the engine's memory-bound kernels.

Every routine mirrors a function of the same name in ``_fallback`` and
keeps a fixed, sequential accumulation order so results are reproducible.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def correlation_forward(floating[:, :, :, ::1] f1, floating[:, :, :, ::1] f2, int max_disp):
    cdef Py_ssize_t N = f1.shape[0], C = f1.shape[1], H = f1.shape[2], W = f1.shape[3]
    cdef int D = 2 * max_disp + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((N, D * D, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, y, x, y0, y1, x0, x1
    cdef int dy, dx, d
    cdef floating inv_c = <floating>1.0 / C
    for n in range(N):
        for dy in range(-max_disp, max_disp + 1):
            y0 = max(0, -dy)
            y1 = min(H, H - dy)
            for dx in range(-max_disp, max_disp + 1):
                x0 = max(0, -dx)
                x1 = min(W, W - dx)
                d = (dy + max_disp) * D + (dx + max_disp)
                for c in range(C):
                    for y in range(y0, y1):
                        for x in range(x0, x1):
                            out[n, d, y, x] += f1[n, c, y, x] * f2[n, c, y + dy, x + dx]
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        out[n, d, y, x] *= inv_c
    return out_arr


def correlation_backward(floating[:, :, :, ::1] grad, floating[:, :, :, ::1] f1,
                         floating[:, :, :, ::1] f2, int max_disp):
    cdef Py_ssize_t N = f1.shape[0], C = f1.shape[1], H = f1.shape[2], W = f1.shape[3]
    cdef int D = 2 * max_disp + 1
    dtype = np.float32 if floating is float else np.float64
    g1_arr = np.zeros((N, C, H, W), dtype=dtype)
    g2_arr = np.zeros((N, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] g1 = g1_arr
    cdef floating[:, :, :, ::1] g2 = g2_arr
    cdef Py_ssize_t n, c, y, x, y0, y1, x0, x1
    cdef int dy, dx, d
    cdef floating inv_c = <floating>1.0 / C
    cdef floating go
    for n in range(N):
        for dy in range(-max_disp, max_disp + 1):
            y0 = max(0, -dy)
            y1 = min(H, H - dy)
            for dx in range(-max_disp, max_disp + 1):
                x0 = max(0, -dx)
                x1 = min(W, W - dx)
                d = (dy + max_disp) * D + (dx + max_disp)
                for c in range(C):
                    for y in range(y0, y1):
                        for x in range(x0, x1):
                            go = grad[n, d, y, x] * inv_c
                            g1[n, c, y, x] += go * f2[n, c, y + dy, x + dx]
                            g2[n, c, y + dy, x + dx] += go * f1[n, c, y, x]
    return g1_arr, g2_arr


def im2row(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    """Rows of (kh, kw, C)-ordered patches gathered from an NHWC image."""
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t K = C * kh * kw
    dtype = np.float32 if floating is float else np.float64
    rows_arr = np.zeros((N * Ho * Wo, K), dtype=dtype)
    cdef floating[:, ::1] rows = rows_arr
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, ix, r, col
    for n in range(N):
        for oy in range(Ho):
            for ox in range(Wo):
                r = (n * Ho + oy) * Wo + ox
                for i in range(kh):
                    iy = oy * stride + i - pad
                    if iy < 0 or iy >= H:
                        continue
                    for j in range(kw):
                        ix = ox * stride + j - pad
                        if ix < 0 or ix >= W:
                            continue
                        col = (i * kw + j) * C
                        for c in range(C):
                            rows[r, col + c] = x[n, iy, ix, c]
    return rows_arr


def row2im(floating[:, ::1] rows, Py_ssize_t N, Py_ssize_t H, Py_ssize_t W, Py_ssize_t C,
           int kh, int kw, int stride, int pad):
    """Adjoint of im2row, accumulating into an NHWC image."""
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    x_arr = np.zeros((N, H, W, C), dtype=dtype)
    cdef floating[:, :, :, ::1] x = x_arr
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, ix, r, col
    for n in range(N):
        for oy in range(Ho):
            for ox in range(Wo):
                r = (n * Ho + oy) * Wo + ox
                for i in range(kh):
                    iy = oy * stride + i - pad
                    if iy < 0 or iy >= H:
                        continue
                    for j in range(kw):
                        ix = ox * stride + j - pad
                        if ix < 0 or ix >= W:
                            continue
                        col = (i * kw + j) * C
                        for c in range(C):
                            x[n, iy, ix, c] += rows[r, col + c]
    return x_arr


def maxpool_forward(floating[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H - k) // stride + 1
    cdef Py_ssize_t Wo = (W - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((N, C, Ho, Wo), dtype=dtype)
    arg_arr = np.empty((N, C, Ho, Wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, c, oy, ox, i, j, best_i
    cdef floating best, v
    for n in range(N):
        for c in range(C):
            for oy in range(Ho):
                for ox in range(Wo):
                    best = x[n, c, oy * stride, ox * stride]
                    best_i = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[n, c, oy * stride + i, ox * stride + j]
                            if v > best:
                                best = v
                                best_i = i * k + j
                    out[n, c, oy, ox] = best
                    arg[n, c, oy, ox] = best_i
    return out_arr, arg_arr


def maxpool_backward(floating[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] arg,
                     Py_ssize_t H, Py_ssize_t W, int k, int stride):
    cdef Py_ssize_t N = grad.shape[0], C = grad.shape[1], Ho = grad.shape[2], Wo = grad.shape[3]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((N, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, oy, ox, a
    for n in range(N):
        for c in range(C):
            for oy in range(Ho):
                for ox in range(Wo):
                    a = arg[n, c, oy, ox]
                    gx[n, c, oy * stride + a // k, ox * stride + a % k] += grad[n, c, oy, ox]
    return gx_arr
