"""Sliding-window crops of panoramic pairs, resized and rotated into training patches."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

DEFAULT_ROTATIONS = (0, 90, 180, 270)


@dataclass
class PanoramaPair:
    I1: np.ndarray  # (3,H,W) float32 in [-1, 1]
    I2: np.ndarray
    M: np.ndarray  # (H,W) uint8 {0,1}
    L1: Optional[np.ndarray] = None
    L2: Optional[np.ndarray] = None
    pair_id: str = ""

    def __post_init__(self):
        size = self.M.shape
        parts = {"I1": self.I1.shape[1:], "I2": self.I2.shape[1:], "M": size}
        if self.L1 is not None:
            parts["L1"] = self.L1.shape
        if self.L2 is not None:
            parts["L2"] = self.L2.shape
        if any(s != size for s in parts.values()):
            raise ValueError(f"pair {self.pair_id!r}: constituents differ in size {parts}")

    @property
    def has_labels(self):
        return self.L1 is not None and self.L2 is not None

    @property
    def shape(self):
        return self.M.shape


@dataclass(frozen=True)
class PatchRef:
    pair_index: int
    pair_id: str
    offset: int
    rotation: int


@dataclass
class Patch:
    I1: np.ndarray
    I2: np.ndarray
    M: np.ndarray
    L1: Optional[np.ndarray]
    L2: Optional[np.ndarray]
    ref: PatchRef


def resize_matrix(n_in, n_out):
    """(n_out, n_in) linear interpolation matrix with half-pixel centers."""
    if n_in == n_out:
        return np.eye(n_out)
    src = np.maximum((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    a = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - frac)
    np.add.at(a, (rows, i1), frac)
    return a


def resize_bilinear(img, size):
    """Resize the last two axes of ``img`` to ``size`` x ``size``."""
    h, w = img.shape[-2:]
    ah, aw = resize_matrix(h, size), resize_matrix(w, size)
    out = ah @ img.astype(np.float64) @ aw.T
    return out.astype(img.dtype)


def resize_nearest(lab, size):
    h, w = lab.shape[-2:]
    ys = np.minimum(((np.arange(size) + 0.5) * h / size).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(size) + 0.5) * w / size).astype(np.int64), w - 1)
    return lab[..., ys[:, None], xs[None, :]]


def rotate(arr, degrees):
    """Counter-clockwise rotation of the last two axes by a multiple of 90 degrees."""
    if degrees % 90:
        raise ValueError(f"rotation must be a multiple of 90 degrees, got {degrees}")
    return np.ascontiguousarray(np.rot90(arr, k=(degrees // 90) % 4, axes=(-2, -1)))


def crop_offsets(width, crop, count):
    """Evenly spaced horizontal offsets anchored at 0 and ``width - crop``."""
    if count < 1:
        raise ValueError(f"crops_per_image must be >= 1, got {count}")
    if count == 1:
        return [0]
    span = width - crop
    return [int(np.floor(j * span / (count - 1) + 0.5)) for j in range(count)]


class PatchSet:
    """Lazily materialized patches; each entry is identified by a :class:`PatchRef`."""

    def __init__(self, pairs, refs, crop, out):
        self.pairs = list(pairs)
        self.refs = list(refs)
        self.crop = crop
        self.out = out

    def __len__(self):
        return len(self.refs)

    def __getitem__(self, i):
        ref = self.refs[i]
        return self.materialize(ref)

    def __iter__(self):
        for ref in self.refs:
            yield self.materialize(ref)

    @property
    def has_labels(self):
        return all(p.has_labels for p in self.pairs)

    def materialize(self, ref):
        pair = self.pairs[ref.pair_index]
        h = pair.shape[0]
        y0 = (h - self.crop) // 2
        win = (slice(y0, y0 + self.crop), slice(ref.offset, ref.offset + self.crop))

        def img(a):
            a = a[(slice(None),) + win]
            if self.crop != self.out:
                a = resize_bilinear(a, self.out)
            return rotate(a, ref.rotation)

        def lab(a):
            if a is None:
                return None
            a = a[win]
            if self.crop != self.out:
                a = resize_nearest(a, self.out)
            return rotate(a, ref.rotation)

        return Patch(img(pair.I1), img(pair.I2), lab(pair.M), lab(pair.L1), lab(pair.L2), ref)

    def manifest_lines(self):
        return [f"{r.pair_id} {r.offset} {r.rotation}" for r in self.refs]

    def write_manifest(self, path):
        Path(path).write_text("".join(line + "\n" for line in self.manifest_lines()))


def extract_patches(pairs, crop=224, out=256, crops_per_image=30, rotations=DEFAULT_ROTATIONS):
    """Patch set over one pair or a sequence of pairs.

    Entries are ordered by pair id, then offset, then rotation.
    """
    if isinstance(pairs, PanoramaPair):
        pairs = [pairs]
    pairs = sorted(pairs, key=lambda p: p.pair_id)
    rotations = tuple(int(r) for r in rotations)
    if not rotations:
        raise ValueError("at least one rotation is required")
    for r in rotations:
        if r % 90:
            raise ValueError(f"rotation must be a multiple of 90 degrees, got {r}")
    if out < 1:
        raise ValueError(f"output size must be >= 1, got {out}")
    refs = []
    for idx, pair in enumerate(pairs):
        h, w = pair.shape
        if crop < 1 or crop > min(h, w):
            raise ValueError(f"pair {pair.pair_id!r}: crop {crop} larger than panorama {h}x{w}")
        for off in crop_offsets(w, crop, crops_per_image):
            refs.extend(PatchRef(idx, pair.pair_id, off, r) for r in rotations)
    return PatchSet(pairs, refs, crop, out)


def kfold_split(n_items, k=5, seed=0):
    """Seeded k-fold split; returns ``[(train_idx, test_idx), ...]``."""
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if k > n_items:
        raise ValueError(f"cannot split {n_items} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n_items)
    folds = [np.sort(f) for f in np.array_split(perm, k)]
    out = []
    for i, test in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        out.append((train, test))
    return out
