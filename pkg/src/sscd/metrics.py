"""Change-detection F1 / IoU and confusion-matrix based mIoU."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


def binarize(prob, tau=0.5):
    """Change mask from probabilities: 1 where p >= tau.

    ``prob`` may be (N,2,H,W) softmax output (channel 1 is "changed"),
    (N,1,H,W), or already a plain array of change probabilities.
    """
    p = np.asarray(prob)
    if p.ndim == 4 and p.shape[1] == 2:
        p = p[:, 1]
    elif p.ndim == 4 and p.shape[1] == 1:
        p = p[:, 0]
    if p.size and (np.isnan(p).any() or p.min() < 0 or p.max() > 1):
        raise ValueError(f"probabilities must lie in [0, 1], got range [{np.nanmin(p)}, {np.nanmax(p)}]")
    return (p >= tau).astype(np.uint8)


@dataclass
class ChangeScores:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    iou: float


def change_counts(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, fp, fn


def scores_from_counts(tp, fp, fn):
    if tp + fp + fn == 0:
        # nothing predicted, nothing to find
        return ChangeScores(tp, fp, fn, 0.0, 0.0, 1.0, 1.0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ChangeScores(tp, fp, fn, precision, recall, f1, tp / (tp + fp + fn))


def f1_change(pred, gt):
    """(precision, recall, F1, IoU) over change pixels."""
    s = scores_from_counts(*change_counts(pred, gt))
    return s.precision, s.recall, s.f1, s.iou


class ConfusionMatrix:
    """K x K counts; entry (g, p) is the number of pixels with truth g predicted as p."""

    def __init__(self, num_classes, counts=None):
        self.num_classes = int(num_classes)
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise ValueError(f"counts must be {num_classes}x{num_classes}, got {self.counts.shape}")

    @property
    def total(self):
        return int(self.counts.sum())

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError(f"cannot merge {self.num_classes}- and {other.num_classes}-class matrices")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __add__(self, other):
        return self.merge(other)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def copy(self):
        return ConfusionMatrix(self.num_classes, self.counts.copy())


def accumulate_confusion(cm, pred_labels, gt_labels, ignore=None):
    """Add per-pixel counts to ``cm`` in place and return it."""
    pred = np.asarray(pred_labels).astype(np.int64).ravel()
    gt = np.asarray(gt_labels).astype(np.int64).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and ground truth differ in size: {pred.size} vs {gt.size}")
    if ignore is not None:
        keep = gt != ignore
        pred, gt = pred[keep], gt[keep]
    k = cm.num_classes
    for name, arr in (("ground truth", gt), ("prediction", pred)):
        bad = (arr < 0) | (arr >= k)
        if bad.any():
            raise ValueError(f"{name} class {int(arr[bad][0])} outside 0..{k - 1}")
    cm.counts += np.bincount(gt * k + pred, minlength=k * k).reshape(k, k)
    return cm


@dataclass
class MetricsReport:
    iou: list  # per class; None where the class is absent from truth and prediction
    miou: float
    miou_changed: Optional[float] = None  # mean over classes 1..K-1 only
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def lines(self):
        """Rows of ``metric,class,value``; class is empty for aggregates."""
        out = []
        for k, v in enumerate(self.iou):
            if v is not None:
                out.append(f"iou,{k},{v:.6f}")
        out.append(f"miou,,{self.miou:.6f}")
        if self.miou_changed is not None:
            out.append(f"miou_changed,,{self.miou_changed:.6f}")
        for name in ("precision", "recall", "f1"):
            v = getattr(self, name)
            if v is not None:
                out.append(f"{name},,{v:.6f}")
        for name, v in self.extra.items():
            out.append(f"{name},,{v:.6f}")
        return out

    def write(self, path):
        Path(path).write_text("".join(line + "\n" for line in self.lines()))


def per_class_iou(cm):
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    denom = c.sum(0) + c.sum(1) - tp
    return [float(t / d) if d > 0 else None for t, d in zip(tp, denom)]


def miou_from_confusion(cm, skip=()):
    """mIoU over classes present in truth or prediction.

    ``miou_changed`` repeats the mean without class 0 (no change) when any
    other class is evaluable.
    """
    iou = per_class_iou(cm)
    used = [v for k, v in enumerate(iou) if v is not None and k not in skip]
    if not used:
        raise ValueError("no evaluable classes: every class has an empty union")
    changed = [v for k, v in enumerate(iou) if k != 0 and v is not None and k not in skip]
    return MetricsReport(iou, float(np.mean(used)), float(np.mean(changed)) if changed else None)


def change_report(pred, gt):
    """Binary report: two-class IoU table plus precision, recall and F1 of the change class."""
    s = scores_from_counts(*change_counts(pred, gt))
    cm = accumulate_confusion(ConfusionMatrix(2), pred, gt)
    rep = miou_from_confusion(cm)
    rep.miou_changed = None
    rep.precision, rep.recall, rep.f1 = s.precision, s.recall, s.f1
    rep.extra["iou_change"] = s.iou
    return rep


def read_report(path):
    """Parse ``metric,class,value`` lines back into a dict keyed by (metric, class)."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        metric, cls, value = line.split(",")
        out[(metric, cls)] = float(value)
    return out
