"""On-disk dataset layouts.

Pair datasets::

    pairs/<id>/t0.ppm  t1.ppm  mask.pgm  [label0.pgm  label1.pgm]

Segmentation datasets::

    images/<id>.ppm  labels/<id>.pgm

Synthetic tuple datasets::

    tuples/<id>/t0.ppm  t1.ppm  mask.pgm  label0.pgm  label1.pgm
    manifest.txt
"""

import hashlib
from pathlib import Path

from ..synthesis import SegSample, SyntheticSample
from .netpbm import (
    NetpbmError,
    read_image,
    read_labelmap,
    read_mask,
    write_image,
    write_labelmap,
    write_mask,
)
from .patches import PanoramaPair


class DatasetError(ValueError):
    """One or more dataset files could not be read; ``problems`` lists them."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("dataset errors:\n" + "\n".join(f"  {p}" for p in self.problems))


def _read_all(jobs):
    """Run ``(path, reader)`` jobs, collecting every failure before raising."""
    out, problems = [], []
    for path, reader in jobs:
        try:
            out.append(reader(path))
        except (OSError, NetpbmError, ValueError) as exc:
            problems.append(f"{path}: {exc}" if str(path) not in str(exc) else str(exc))
            out.append(None)
    return out, problems


def write_pair(root, pair):
    d = Path(root) / "pairs" / pair.pair_id
    d.mkdir(parents=True, exist_ok=True)
    write_image(pair.I1, d / "t0.ppm")
    write_image(pair.I2, d / "t1.ppm")
    write_mask(pair.M, d / "mask.pgm")
    if pair.has_labels:
        write_labelmap(pair.L1, d / "label0.pgm")
        write_labelmap(pair.L2, d / "label1.pgm")
    return d


def read_pairs(root, require_labels=False):
    """All pairs under ``root/pairs`` sorted by id."""
    base = Path(root) / "pairs"
    if not base.is_dir():
        raise DatasetError([f"{base}: not a directory"])
    pairs, problems = [], []
    for d in sorted(p for p in base.iterdir() if p.is_dir()):
        has_labels = (d / "label0.pgm").exists() or (d / "label1.pgm").exists()
        if require_labels and not has_labels:
            problems.append(f"{d}: missing label0.pgm/label1.pgm")
            continue
        jobs = [(d / "t0.ppm", read_image), (d / "t1.ppm", read_image), (d / "mask.pgm", read_mask)]
        if has_labels:
            jobs += [(d / "label0.pgm", read_labelmap), (d / "label1.pgm", read_labelmap)]
        parts, errs = _read_all(jobs)
        problems += errs
        if errs:
            continue
        try:
            pairs.append(PanoramaPair(*parts[:3], *(parts[3:] or [None, None]), pair_id=d.name))
        except ValueError as exc:
            problems.append(f"{d}: {exc}")
    if problems:
        raise DatasetError(problems)
    if not pairs:
        raise DatasetError([f"{base}: no pairs found"])
    return pairs


def write_seg_dataset(root, samples, ids=None):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    ids = ids or [f"{i:05d}" for i in range(len(samples))]
    for sid, s in zip(ids, samples):
        write_image(s.image, root / "images" / f"{sid}.ppm")
        write_labelmap(s.labels, root / "labels" / f"{sid}.pgm", allow_unlabeled=True)


def read_seg_dataset(root):
    root = Path(root)
    img_dir, lab_dir = root / "images", root / "labels"
    problems = [f"{d}: not a directory" for d in (img_dir, lab_dir) if not d.is_dir()]
    if problems:
        raise DatasetError(problems)
    samples = []
    for img_path in sorted(img_dir.glob("*.ppm")):
        lab_path = lab_dir / (img_path.stem + ".pgm")
        if not lab_path.exists():
            problems.append(f"{lab_path}: missing label map for {img_path.name}")
            continue
        (img, lab), errs = _read_all([(img_path, read_image), (lab_path, read_labelmap)])
        problems += errs
        if errs:
            continue
        try:
            samples.append(SegSample(img, lab))
        except ValueError as exc:
            problems.append(f"{img_path}: {exc}")
    if problems:
        raise DatasetError(problems)
    return samples


def write_tuples(root, samples):
    """Write synthetic tuples plus a manifest of ``id n1 n2 kept1 kept2`` lines."""
    root = Path(root)
    (root / "tuples").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        tid = f"{i:05d}"
        d = root / "tuples" / tid
        d.mkdir(exist_ok=True)
        write_image(s.I1, d / "t0.ppm")
        write_image(s.I2, d / "t1.ppm")
        write_mask(s.M, d / "mask.pgm")
        write_labelmap(s.L1p, d / "label0.pgm")
        write_labelmap(s.L2p, d / "label1.pgm")
        n = " ".join(str(v) for v in s.n) if s.n else "- -"
        kept = " ".join(",".join(str(c) for c in k) or "-" for k in s.kept) if s.kept else "- -"
        lines.append(f"{tid} {n} {kept}")
    (root / "manifest.txt").write_text("".join(line + "\n" for line in lines))


def read_tuples(root):
    base = Path(root) / "tuples"
    if not base.is_dir():
        raise DatasetError([f"{base}: not a directory"])
    out, problems = [], []
    for d in sorted(p for p in base.iterdir() if p.is_dir()):
        names = ("t0.ppm", "t1.ppm", "mask.pgm", "label0.pgm", "label1.pgm")
        readers = (read_image, read_image, read_mask, read_labelmap, read_labelmap)
        parts, errs = _read_all([(d / n, r) for n, r in zip(names, readers)])
        problems += errs
        if not errs:
            out.append(SyntheticSample(*parts))
    if problems:
        raise DatasetError(problems)
    return out


def dataset_hash(root):
    """Git-style content hash: sha1 over sorted relative paths and blob hashes."""
    root = Path(root)
    outer = hashlib.sha1()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        data = path.read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        outer.update(f"{path.relative_to(root).as_posix()} {blob}\n".encode())
    return outer.hexdigest()
