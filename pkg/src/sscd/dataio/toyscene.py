"""Procedural scene pairs with exact ground truth.

Colored rectangles and discs are painted over a smooth textured background.
Some primitives appear, disappear or change class between the two capture
times; the change mask is the union of the altered primitives' silhouettes
and the per-side change labels are read off the rendered label maps.
"""

from dataclasses import dataclass, replace

import numpy as np

from ..synthesis import SegSample
from .patches import PanoramaPair

ALTERATIONS = ("appear", "disappear", "recolor")

# RGB in [-1, 1]; saturated so classes stay separable from the gray background
_BASE_COLORS = np.array(
    [
        [0.9, -0.7, -0.7],
        [-0.7, 0.8, -0.7],
        [-0.7, -0.6, 0.9],
        [0.9, 0.8, -0.8],
        [0.8, -0.7, 0.8],
        [-0.8, 0.8, 0.8],
        [0.9, 0.1, -0.8],
        [0.1, -0.8, 0.9],
    ]
)


def class_color(c):
    """Fill color of class ``c >= 1``."""
    if c - 1 < len(_BASE_COLORS):
        return _BASE_COLORS[c - 1]
    rng = np.random.default_rng(c)
    col = rng.uniform(-0.9, 0.9, 3)
    col[rng.integers(3)] = 0.9
    return col


@dataclass(frozen=True)
class Primitive:
    shape: str  # "rect" or "disc"
    cy: float
    cx: float
    ry: float  # half-height, or radius for discs
    rx: float
    cls: int
    shade: float = 0.0  # per-instance brightness offset

    def silhouette(self, h, w, x0=0):
        yy, xx = np.mgrid[0:h, x0:x0 + w]
        if self.shape == "disc":
            return (yy - self.cy) ** 2 + (xx - self.cx) ** 2 <= self.ry ** 2
        return (np.abs(yy - self.cy) <= self.ry) & (np.abs(xx - self.cx) <= self.rx)


@dataclass
class ToyScene:
    I1: np.ndarray
    I2: np.ndarray
    M: np.ndarray
    L1: np.ndarray  # change labels (non-background only inside M)
    L2: np.ndarray
    S1: np.ndarray  # full scene labels at each time
    S2: np.ndarray
    seed: int = 0

    def as_pair(self, pair_id=None):
        return PanoramaPair(self.I1, self.I2, self.M, self.L1, self.L2, pair_id or f"toy{self.seed:05d}")


def _texture(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    tex = np.zeros((h, w))
    for _ in range(4):
        fy, fx = rng.uniform(-0.25, 0.25, 2)
        tex += rng.uniform(0.04, 0.1) * np.sin(fy * yy + fx * xx + rng.uniform(0, 2 * np.pi))
    base = rng.uniform(-0.3, 0.1)
    tint = rng.uniform(-0.05, 0.05, 3)
    return base + tint[:, None, None] + tex[None]


def _random_primitive(rng, h, w, k_classes, cls=None):
    shape = "disc" if rng.random() < 0.5 else "rect"
    lo, hi = max(3, h // 12), max(4, h // 5)
    ry = float(rng.integers(lo, hi + 1))
    rx = ry if shape == "disc" else float(rng.integers(lo, hi + 1))
    cy = float(rng.uniform(ry * 0.5, h - 1 - ry * 0.5))
    cx = float(rng.uniform(rx * 0.5, w - 1 - rx * 0.5))
    if cls is None:
        cls = int(rng.integers(1, k_classes))
    return Primitive(shape, cy, cx, ry, rx, cls, float(rng.uniform(-0.1, 0.1)))


def _paint(h, w, x0, background, prims):
    img = background[:, :, x0:x0 + w].copy()
    lab = np.zeros((h, w), dtype=np.uint8)
    for p in prims:
        sil = p.silhouette(h, w, x0)
        img[:, sil] = (class_color(p.cls) + p.shade)[:, None]
        lab[sil] = p.cls
    return img, lab


def render_scene(size, static, altered, background, rng, shift=0, noise=0.03):
    """Render a pair from explicit primitives.

    ``altered`` holds ``(before, after)`` tuples where either side may be
    ``None``.  ``background`` must be at least ``size + |shift|`` wide.  Labels
    and the mask live in the first image's frame; the second image is
    rendered ``shift`` pixels to the right in the world.
    """
    h = w = size
    before = list(static) + [a for a, _ in altered if a is not None]
    after = list(static) + [b for _, b in altered if b is not None]
    x1 = max(0, -shift)
    x2 = x1 + shift
    I1, S1 = _paint(h, w, x1, background, before)
    I2, _ = _paint(h, w, x2, background, after)
    # labels for time 2 are expressed in the frame of the first image
    _, S2 = _paint(h, w, x1, background, after)
    M = np.zeros((h, w), dtype=bool)
    for a, b in altered:
        for p in (a, b):
            if p is not None:
                M |= p.silhouette(h, w, x1)
    L1 = np.where(M, S1, 0).astype(np.uint8)
    L2 = np.where(M, S2, 0).astype(np.uint8)
    I1 = I1 + noise * rng.standard_normal(I1.shape)
    I2 = I2 + noise * rng.standard_normal(I2.shape)
    I1 = np.clip(I1, -1, 1).astype(np.float32)
    I2 = np.clip(I2, -1, 1).astype(np.float32)
    return ToyScene(I1, I2, M.astype(np.uint8), L1, L2, S1, S2)


def generate_toy_scene_pair(seed, size=64, k_classes=4, n_static=None, n_alterations=None, shift=0):
    """Random toy pair; class 0 is the background / no-change class."""
    if size < 32:
        raise ValueError(f"toy scenes need size >= 32, got {size}")
    if k_classes < 2:
        raise ValueError(f"need at least 2 classes, got {k_classes}")
    rng = np.random.default_rng(seed)
    h, w = size, size
    background = _texture(rng, h, w + abs(shift))
    x1 = max(0, -shift)
    if n_static is None:
        n_static = int(rng.integers(2, 5))
    if n_alterations is None:
        n_alterations = int(rng.integers(1, 3))

    def prim(cls=None):
        p = _random_primitive(rng, h, w, k_classes, cls)
        return replace(p, cx=p.cx + x1)

    static = [prim() for _ in range(n_static)]
    altered = []
    for _ in range(n_alterations):
        kind = ALTERATIONS[int(rng.integers(len(ALTERATIONS)))]
        if kind == "recolor" and k_classes < 3:
            kind = "appear"
        p = prim()
        if kind == "appear":
            altered.append((None, p))
        elif kind == "disappear":
            altered.append((p, None))
        else:
            other = int(rng.integers(1, k_classes - 1))
            other += other >= p.cls
            altered.append((p, replace(p, cls=other)))
    scene = render_scene(size, static, altered, background, rng, shift)
    scene.seed = seed
    return scene


def toy_segmentation_sample(seed, size=64, k_classes=4, n_primitives=None):
    """One labeled image for synthesizing semantic-change tuples.

    At least two distinct foreground classes are always present.
    """
    if k_classes < 3:
        raise ValueError(f"segmentation samples need k_classes >= 3 (two foreground classes), got {k_classes}")
    rng = np.random.default_rng(seed)
    background = _texture(rng, size, size)
    if n_primitives is None:
        n_primitives = int(rng.integers(3, 7))
    n_primitives = max(n_primitives, 2)
    first = rng.choice(np.arange(1, k_classes), size=2, replace=False)
    prims = [_random_primitive(rng, size, size, k_classes, int(c)) for c in first]
    prims += [_random_primitive(rng, size, size, k_classes) for _ in range(n_primitives - 2)]
    # paint largest first so small primitives are not fully occluded
    prims.sort(key=lambda p: -p.ry * p.rx)
    img, lab = _paint(size, size, 0, background, prims)
    img = np.clip(img + 0.03 * rng.standard_normal(img.shape), -1, 1).astype(np.float32)
    return SegSample(img, lab)


def toy_segmentation_set(count, seed=0, size=64, k_classes=4):
    """``count`` samples, each with at least two foreground classes visible."""
    out = []
    i = 0
    while len(out) < count:
        s = toy_segmentation_sample(seed * 1_000_003 + i, size, k_classes)
        i += 1
        if len(s.present_classes()) >= 2:
            out.append(s)
    return out
