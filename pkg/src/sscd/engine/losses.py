"""Pixel-wise change and semantic losses.

Both default to a plain sum over every pixel of the batch; ``reduction="mean"``
divides by the pixel count instead.
"""

import numpy as np

from .ops import log_softmax_array, softmax_array
from .tensor import ShapeError, track

PROB_CLAMP = 1e-7


def _check_reduction(reduction):
    if reduction not in ("sum", "mean"):
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def _target_array(target):
    return np.asarray(getattr(target, "data", target))


def bce_change_loss(logits, target, reduction="sum"):
    """Binary cross-entropy of the change channel after a 2-way softmax.

    ``logits`` is (N,2,H,W); channel 1 is the change class.  ``target`` is a
    {0,1} mask of shape (N,H,W), (N,1,H,W) or (H,W) when N == 1.
    """
    _check_reduction(reduction)
    if logits.data.ndim != 4 or logits.shape[1] != 2:
        raise ShapeError(f"bce_change_loss: logits must be (N,2,H,W), got {logits.shape}")
    n, _, h, w = logits.shape
    t = _target_array(target)
    if t.ndim == 4 and t.shape[1] == 1:
        t = t[:, 0]
    if t.ndim == 2:
        t = t[None]
    if t.shape != (n, h, w):
        raise ShapeError(f"bce_change_loss: target shape {t.shape} does not match logits {logits.shape}")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("bce_change_loss: target must be binary (values 0 or 1)")
    t = t.astype(logits.dtype)

    p = softmax_array(logits.data)[:, 1]
    q = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    loss = -(t * np.log(q) + (1 - t) * np.log(1 - q)).sum()
    scale = 1.0 / (n * h * w) if reduction == "mean" else 1.0
    inside = (p > PROB_CLAMP) & (p < 1 - PROB_CLAMP)

    def backward(g):
        # d/dz1 = p - t, d/dz0 = t - p where the clamp is inactive
        d = np.where(inside, p - t, 0).astype(logits.dtype) * (g * scale)
        return (np.stack([-d, d], axis=1),)

    return track(np.asarray(loss * scale, dtype=logits.dtype), (logits,), backward)


def split_semantic_loss(logits, target1, target2, reduction="sum"):
    """Cross-entropy over the two K-channel halves of (N,2K,H,W) logits.

    The first K channels are scored against ``target1`` (time t1), the last
    K against ``target2`` (time t2).  Targets hold integer class ids.
    """
    _check_reduction(reduction)
    if logits.data.ndim != 4 or logits.shape[1] % 2 or logits.shape[1] < 4:
        raise ShapeError(f"split_semantic_loss: logits must be (N,2K,H,W) with K>=2, got {logits.shape}")
    n, c2, h, w = logits.shape
    k = c2 // 2
    targets = []
    for which, tgt in (("target1", target1), ("target2", target2)):
        t = _target_array(tgt)
        if t.ndim == 2:
            t = t[None]
        if t.shape != (n, h, w):
            raise ShapeError(f"split_semantic_loss: {which} shape {t.shape} does not match logits {logits.shape}")
        bad = np.argwhere((t < 0) | (t >= k))
        if bad.size:
            b, y, x = bad[0]
            raise ValueError(
                f"split_semantic_loss: {which} class {int(t[b, y, x])} at pixel (n={b}, y={y}, x={x}) "
                f"is outside 0..{k - 1}"
            )
        targets.append(t.astype(np.int64))

    scale = 1.0 / (n * h * w) if reduction == "mean" else 1.0
    halves = (logits.data[:, :k], logits.data[:, k:])
    total = 0.0
    probs = []
    for z, t in zip(halves, targets):
        logp = log_softmax_array(z)
        total -= np.take_along_axis(logp, t[:, None], axis=1).sum()
        probs.append(np.exp(logp))

    def backward(g):
        parts = []
        for p, t in zip(probs, targets):
            gp = p.copy()
            np.put_along_axis(gp, t[:, None], np.take_along_axis(gp, t[:, None], axis=1) - 1, axis=1)
            parts.append(gp)
        return ((np.concatenate(parts, axis=1) * (g * scale)).astype(logits.dtype),)

    return track(np.asarray(total * scale, dtype=logits.dtype), (logits,), backward)
