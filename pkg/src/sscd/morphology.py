"""Binary morphology with a filled k x k square structuring element.

The mask is treated as a subset of an infinite plane that is zero outside
the grid.  For even ``k`` the element spans offsets ``-(k-1)//2 .. k//2``;
dilation uses its reflection so that opening and closing are idempotent.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

OPS = ("erosion", "dilation", "opening", "closing")


def _window_reduce(m, k, before, after, reduce):
    # separable square window: reduce along rows, then along columns
    p = np.pad(m, ((before, after), (0, 0)))
    m = reduce(sliding_window_view(p, k, axis=0), axis=-1)
    p = np.pad(m, ((0, 0), (before, after)))
    return reduce(sliding_window_view(p, k, axis=1), axis=-1)


def erode(mask, k):
    a = (k - 1) // 2
    return _window_reduce(mask, k, a, k - 1 - a, np.min)


def dilate(mask, k):
    a = (k - 1) // 2
    return _window_reduce(mask, k, k - 1 - a, a, np.max)


def _as_mask(mask):
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    return m.astype(np.uint8, copy=False) != 0


def morph_transform(mask, op, k):
    """Apply ``op`` (erosion, dilation, opening, closing) with a k x k square.

    Returns a uint8 {0,1} array of the input's shape.
    """
    if k < 1:
        raise ValueError(f"kernel size must be >= 1, got {k}")
    m = _as_mask(mask)
    if op == "erosion":
        out = erode(m, k)
    elif op == "dilation":
        out = dilate(m, k)
    elif op == "opening":
        out = dilate(erode(m, k), k)
    elif op == "closing":
        # dilate on a canvas wide enough that nothing is clipped before eroding
        h, w = m.shape
        big = np.pad(m, k)
        out = erode(dilate(big, k), k)[k:k + h, k:k + w]
    else:
        raise ValueError(f"unknown morphological op {op!r}; expected one of {OPS}")
    return out.astype(np.uint8)
