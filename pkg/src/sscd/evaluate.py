"""Batched inference and metric aggregation for trained models."""

import numpy as np

from .engine.ops import softmax_array
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    accumulate_confusion,
    binarize,
    change_counts,
    miou_from_confusion,
    scores_from_counts,
)
from .networks import direct_logits, forward_change, semantic_logits

TAU_GRID = tuple(np.round(np.arange(0.05, 1.0, 0.05), 2))


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def _require_eval(model):
    if model.training:
        raise RuntimeError("switch the model to eval mode before inference")


def change_probability(model, I1, I2, batch_size=16):
    """(N,H,W) change probabilities from a CSCDNet."""
    _require_eval(model)
    out = []
    for sl in _batches(len(I1), batch_size):
        logits = forward_change(model, I1[sl], I2[sl]).data
        out.append(softmax_array(logits.astype(np.float64))[:, 1])
    return np.concatenate(out)


def semantic_predictions(model, I1, I2, M=None, batch_size=16):
    """Per-time argmax labels (P1, P2), each (N,H,W) int64.

    SSCDNet models need the change mask ``M``; CSSCDNet models ignore it.
    """
    _require_eval(model)
    k = model.config.num_classes
    p1, p2 = [], []
    for sl in _batches(len(I1), batch_size):
        if model.kind == "sscdnet":
            logits = semantic_logits(model, I1[sl], I2[sl], M[sl]).data
        else:
            logits = direct_logits(model, I1[sl], I2[sl]).data
        p1.append(logits[:, :k].argmax(1))
        p2.append(logits[:, k:].argmax(1))
    return np.concatenate(p1), np.concatenate(p2)


def pipeline_predictions(cd_model, sscd_model, I1, I2, tau=0.5, batch_size=16):
    """Chain a CSCDNet's binarized mask into an SSCDNet."""
    mask = binarize(change_probability(cd_model, I1, I2, batch_size), tau)
    return semantic_predictions(sscd_model, I1, I2, mask, batch_size), mask


def change_scores(prob, gt, tau=0.5):
    """Aggregate report over all pixels plus per-image (precision, recall, F1, IoU) rows."""
    pred = binarize(prob, tau)
    per_image = [scores_from_counts(*change_counts(p, g)) for p, g in zip(pred, gt)]
    total = scores_from_counts(*change_counts(pred, gt))
    cm = accumulate_confusion(ConfusionMatrix(2), pred, gt)
    rep = miou_from_confusion(cm)
    rep.miou_changed = None
    rep.precision, rep.recall, rep.f1 = total.precision, total.recall, total.f1
    rep.extra["iou_change"] = total.iou
    rep.extra["tau"] = float(tau)
    best_tau, best_f1 = tau, total.f1
    for t in TAU_GRID:
        f1 = scores_from_counts(*change_counts(binarize(prob, t), gt)).f1
        if f1 > best_f1:
            best_tau, best_f1 = float(t), f1
    rep.extra["best_tau"] = best_tau
    rep.extra["f1_best_tau"] = best_f1
    return rep, per_image


def semantic_confusion(P1, P2, L1, L2, num_classes, ignore=None):
    """Both time points accumulated into one confusion matrix."""
    cm = ConfusionMatrix(num_classes)
    accumulate_confusion(cm, P1, L1, ignore)
    accumulate_confusion(cm, P2, L2, ignore)
    return cm


def semantic_report(P1, P2, L1, L2, num_classes, ignore=None) -> MetricsReport:
    return miou_from_confusion(semantic_confusion(P1, P2, L1, L2, num_classes, ignore))
