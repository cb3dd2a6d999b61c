"""Training tuples for the semantic change labeler, synthesized from
ordinary segmentation data, and change-mask augmentation.

A tuple is built from two unrelated segmentation samples: each side keeps a
random subset of the classes it contains, everything else becomes the
background (no-change) class, and the change mask is the union of both
kept silhouettes.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .morphology import OPS, morph_transform

BACKGROUND = 0
UNLABELED = 255

# class ids of the 11-class street-scene set; "no change" doubles as background
PSCD_CLASSES = (
    "no change",
    "animal",
    "vehicle",
    "barrier",
    "area",
    "structure",
    "lane marking",
    "vegetation",
    "traffic",
    "others",
    "debris",
)


class TooFewClassesError(ValueError):
    """A segmentation sample has fewer than two non-background classes."""


@dataclass
class SegSample:
    image: np.ndarray  # (3,H,W) float in [-1, 1]
    labels: np.ndarray  # (H,W) integer class ids

    def __post_init__(self):
        if self.image.shape[1:] != self.labels.shape:
            raise ValueError(f"image {self.image.shape} and labels {self.labels.shape} differ in size")

    def present_classes(self, background=BACKGROUND):
        cls = np.unique(self.labels)
        return cls[(cls != background) & (cls != UNLABELED)]


@dataclass
class SyntheticSample:
    I1: np.ndarray
    I2: np.ndarray
    M: np.ndarray  # (H,W) uint8 {0,1}
    L1p: np.ndarray
    L2p: np.ndarray
    n: tuple = ()  # number of classes kept on each side
    kept: tuple = ()


@dataclass
class AugmentConfig:
    enabled: bool = True
    kernel_min: int = 1
    kernel_max: int = 20
    ops: tuple = field(default=OPS)

    def __post_init__(self):
        if not 1 <= self.kernel_min <= self.kernel_max:
            raise ValueError(f"need 1 <= kernel_min <= kernel_max, got {self.kernel_min}, {self.kernel_max}")
        unknown = set(self.ops) - set(OPS)
        if unknown or not self.ops:
            raise ValueError(f"unsupported transforms {sorted(unknown)}")


def synthesize_sample(seg1, seg2, n_max=10, rng=None, background=BACKGROUND):
    """Build one (I1, I2, M, L1', L2') tuple.

    For each side, n is drawn uniformly from [1, min(n_max, N-1)] where N is
    the number of non-background classes present, then n of those classes
    are drawn without replacement.  Raises :class:`TooFewClassesError` when
    either side has N < 2 so the caller can redraw.
    """
    if rng is None:
        rng = np.random.default_rng()
    if seg1.labels.shape != seg2.labels.shape:
        raise ValueError(f"samples differ in size: {seg1.labels.shape} vs {seg2.labels.shape}")
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    present = []
    for side, seg in ((1, seg1), (2, seg2)):
        cls = seg.present_classes(background)
        if len(cls) < 2:
            raise TooFewClassesError(f"side {side} has {len(cls)} non-background classes; need at least 2")
        present.append(cls)

    kept_maps, ns, kept = [], [], []
    for seg, cls in zip((seg1, seg2), present):
        n = int(rng.integers(1, min(n_max, len(cls) - 1) + 1))
        chosen = np.sort(rng.choice(cls, size=n, replace=False))
        kept_maps.append(np.where(np.isin(seg.labels, chosen), seg.labels, background).astype(seg.labels.dtype))
        ns.append(n)
        kept.append(tuple(int(c) for c in chosen))
    L1p, L2p = kept_maps
    M = ((L1p != background) | (L2p != background)).astype(np.uint8)
    return SyntheticSample(seg1.image, seg2.image, M, L1p, L2p, tuple(ns), tuple(kept))


def synthesize_dataset(segs, count, n_max=10, seed=0, background=BACKGROUND, max_redraws=1000):
    """``count`` tuples from random pairs of ``segs``.

    Tuple ``i`` uses its own generator seeded from ``(seed, i)``, so any
    subset can be regenerated independently.
    """
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        for _ in range(max_redraws):
            a, b = rng.integers(0, len(segs), size=2)
            try:
                out.append(synthesize_sample(segs[a], segs[b], n_max, rng, background))
                break
            except TooFewClassesError:
                continue
        else:
            raise TooFewClassesError(f"no usable pair found for tuple {i} after {max_redraws} draws")
    return out


def check_sample(sample, L1=None, L2=None, n_max=None, background=BACKGROUND):
    """Return a list of invariant violations (empty when the tuple is valid)."""
    problems = []
    union = (sample.L1p != background) | (sample.L2p != background)
    if not np.array_equal(sample.M.astype(bool), union):
        problems.append("mask differs from union of change-label silhouettes")
    for name, kept, full in (("L1'", sample.L1p, L1), ("L2'", sample.L2p, L2)):
        if full is None:
            continue
        fg = kept != background
        if not np.array_equal(kept[fg], full[fg]):
            problems.append(f"{name} carries a class not present at that pixel of the source labels")
        if n_max is not None:
            n_kept = len(np.unique(kept[fg]))
            n_src = len(SegSample(np.zeros((3,) + full.shape), full).present_classes(background))
            if not 1 <= n_kept <= min(n_max, n_src - 1):
                problems.append(f"{name} keeps {n_kept} classes outside [1, min({n_max}, {n_src - 1})]")
    return problems


def augment_mask(mask, cfg, rng):
    """Randomly erode, dilate, open or close ``mask`` with a random square size."""
    if not cfg.enabled:
        return np.array(mask, copy=True)
    op = cfg.ops[int(rng.integers(len(cfg.ops)))]
    k = int(rng.integers(cfg.kernel_min, cfg.kernel_max + 1))
    return morph_transform(mask, op, k)


def remap_classes(labels, mapping):
    """Pixelwise class substitution through ``mapping`` (source id -> target id)."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    missing = [int(c) for c in present if int(c) not in mapping]
    if missing:
        raise KeyError(f"class id {missing[0]} has no mapping entry (unmapped: {missing})")
    size = max(int(present.max()) + 1, max(mapping) + 1)
    table = np.zeros(size, dtype=np.int64)
    for src, dst in mapping.items():
        table[src] = dst
    return table[labels].astype(labels.dtype)


def load_class_mapping(path):
    """Read a two-column ``source_id target_id`` text file; ``#`` starts a comment."""
    mapping = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'source_id target_id', got {raw!r}")
        src, dst = int(parts[0]), int(parts[1])
        if src in mapping and mapping[src] != dst:
            raise ValueError(f"{path}:{lineno}: class {src} mapped twice")
        mapping[src] = dst
    return mapping
