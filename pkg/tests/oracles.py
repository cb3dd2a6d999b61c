"""Straight-line reference implementations used as test oracles.

Everything here is written for clarity with explicit Python loops and
shares no code with the package.
"""

import math

import numpy as np


def conv2d_loop(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for a in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                yy, xj = y * stride + i - pad, xx * stride + j - pad
                                if 0 <= yy < h and 0 <= xj < wd:
                                    acc += x[a, c, yy, xj] * w[o, c, i, j]
                    out[a, o, y, xx] = acc
    return out


def maxpool_loop(x, k, stride):
    n, c, h, w = x.shape
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for a in range(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    out[a, ch, y, xx] = max(
                        x[a, ch, y * stride + i, xx * stride + j] for i in range(k) for j in range(k)
                    )
    return out


def correlation_loop(f1, f2, d):
    n, c, h, w = f1.shape
    side = 2 * d + 1
    out = np.zeros((n, side * side, h, w))
    for a in range(n):
        for dy in range(-d, d + 1):
            for dx in range(-d, d + 1):
                ch = (dy + d) * side + (dx + d)
                for y in range(h):
                    for x in range(w):
                        if 0 <= y + dy < h and 0 <= x + dx < w:
                            s = 0.0
                            for k in range(c):
                                s += f1[a, k, y, x] * f2[a, k, y + dy, x + dx]
                            out[a, ch, y, x] = s / c
    return out


def bce_direct(logits, target, clamp=1e-7):
    total = 0.0
    n, _, h, w = logits.shape
    for a in range(n):
        for y in range(h):
            for x in range(w):
                z0, z1 = logits[a, 0, y, x], logits[a, 1, y, x]
                p = 1.0 / (1.0 + math.exp(z0 - z1))
                p = min(max(p, clamp), 1 - clamp)
                t = target[a, y, x]
                total -= t * math.log(p) + (1 - t) * math.log(1 - p)
    return total


def semantic_direct(logits, t1, t2):
    n, c2, h, w = logits.shape
    k = c2 // 2
    total = 0.0
    for a in range(n):
        for y in range(h):
            for x in range(w):
                for half, t in ((0, t1), (1, t2)):
                    z = [logits[a, half * k + j, y, x] for j in range(k)]
                    m = max(z)
                    lse = m + math.log(sum(math.exp(v - m) for v in z))
                    total -= z[t[a, y, x]] - lse
    return total


def square_offsets(k):
    lo = -((k - 1) // 2)
    return [(dy, dx) for dy in range(lo, lo + k) for dx in range(lo, lo + k)]


def _pixel_set(mask):
    return {(int(y), int(x)) for y, x in zip(*np.nonzero(mask))}


def _to_mask(points, shape):
    out = np.zeros(shape, dtype=np.uint8)
    for y, x in points:
        if 0 <= y < shape[0] and 0 <= x < shape[1]:
            out[y, x] = 1
    return out


def erode_set(points, k):
    """Points p with p + b in the set for every element offset b (set outside is empty)."""
    offs = square_offsets(k)
    cand = {(y - dy, x - dx) for (y, x) in points for dy, dx in offs}
    return {p for p in cand if all((p[0] + dy, p[1] + dx) in points for dy, dx in offs)}


def dilate_set(points, k):
    """Minkowski sum with the element: {p + b}."""
    offs = square_offsets(k)
    return {(y + dy, x + dx) for (y, x) in points for dy, dx in offs}


def morph_oracle(mask, op, k):
    """Set-definition morphology on the infinite plane, restricted to the grid."""
    pts = _pixel_set(mask)
    if op == "erosion":
        res = erode_set(pts, k)
    elif op == "dilation":
        res = dilate_set(pts, k)
    elif op == "opening":
        res = dilate_set(erode_set(pts, k), k)
    else:
        res = erode_set(dilate_set(pts, k), k)
    return _to_mask(res, mask.shape)


def confusion_loop(pred, gt, k, ignore=None):
    cm = [[0] * k for _ in range(k)]
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        if ignore is not None and g == ignore:
            continue
        cm[int(g)][int(p)] += 1
    return np.array(cm, dtype=np.int64)


def synthesize_reference(labels1, labels2, n_max, rng, background=0, unlabeled=255):
    """Plain re-statement of the tuple sampling procedure with the same draw order."""
    kept_maps = []
    present = []
    for lab in (labels1, labels2):
        classes = sorted({int(v) for v in np.ravel(lab)} - {background, unlabeled})
        if len(classes) < 2:
            return None
        present.append(classes)
    for lab, classes in zip((labels1, labels2), present):
        hi = min(n_max, len(classes) - 1)
        n = int(rng.integers(1, hi + 1))
        chosen = set(int(c) for c in rng.choice(np.array(classes), size=n, replace=False))
        out = np.zeros_like(lab)
        for y in range(lab.shape[0]):
            for x in range(lab.shape[1]):
                out[y, x] = lab[y, x] if int(lab[y, x]) in chosen else background
        kept_maps.append(out)
    l1, l2 = kept_maps
    m = np.zeros(l1.shape, dtype=np.uint8)
    for y in range(l1.shape[0]):
        for x in range(l1.shape[1]):
            m[y, x] = 1 if (l1[y, x] != background or l2[y, x] != background) else 0
    return m, l1, l2


def bilinear_loop(img, size):
    """Half-pixel-center bilinear resize of a (C,H,W) array, edges clamped."""
    c, h, w = img.shape
    out = np.zeros((c, size, size))

    def taps(o, n_in):
        s = max((o + 0.5) * n_in / size - 0.5, 0.0)
        i0 = min(int(math.floor(s)), n_in - 1)
        return i0, min(i0 + 1, n_in - 1), s - i0

    for y in range(size):
        y0, y1, fy = taps(y, h)
        for x in range(size):
            x0, x1, fx = taps(x, w)
            for ch in range(c):
                top = img[ch, y0, x0] * (1 - fx) + img[ch, y0, x1] * fx
                bot = img[ch, y1, x0] * (1 - fx) + img[ch, y1, x1] * fx
                out[ch, y, x] = top * (1 - fy) + bot * fy
    return out
