"""Hot loops behind the tensor engine.

The compiled ``_ckernels`` extension is used when it is importable; the
numpy implementations in ``_fallback`` are used otherwise, or whenever the
``SSCD_PURE_PYTHON`` environment variable is set to a non-empty value other
than ``0``.  ``BACKEND`` names the active choice.
"""

import os

import numpy as np

from . import _fallback

_force_pure = os.environ.get("SSCD_PURE_PYTHON", "") not in ("", "0")

_compiled = None
if not _force_pure:
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"

_FUNCS = (
    "correlation_forward",
    "correlation_backward",
    "im2row",
    "row2im",
    "maxpool_forward",
    "maxpool_backward",
)


def backend_module(name=None):
    """Return the kernel module for ``name`` ("compiled" or "python").

    ``None`` gives the active backend.
    """
    name = name or BACKEND
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def compiled_available():
    return _compiled is not None


def _contig(a):
    return np.ascontiguousarray(a)


_active = backend_module()


def correlation_forward(f1, f2, max_disp):
    return _active.correlation_forward(_contig(f1), _contig(f2), int(max_disp))


def correlation_backward(grad, f1, f2, max_disp):
    return _active.correlation_backward(_contig(grad), _contig(f1), _contig(f2), int(max_disp))


def im2row(x, kh, kw, stride, pad):
    """Patch matrix (N*Ho*Wo, kh*kw*C) from an NHWC image, one receptive field per row."""
    return _active.im2row(_contig(x), kh, kw, stride, pad)


def row2im(rows, n, h, w, c, kh, kw, stride, pad):
    """Adjoint of :func:`im2row`: scatter-add rows back into an NHWC image."""
    return _active.row2im(_contig(rows), n, h, w, c, kh, kw, stride, pad)


def maxpool_forward(x, k, stride):
    return _active.maxpool_forward(_contig(x), k, stride)


def maxpool_backward(grad, arg, h, w, k, stride):
    return _active.maxpool_backward(_contig(grad), _contig(arg), h, w, k, stride)


__all__ = ["BACKEND", "backend_module", "compiled_available", *_FUNCS]
