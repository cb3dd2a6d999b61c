"""Binary PPM (P6) / PGM (P5) codecs for images, label maps and masks."""

from pathlib import Path

import numpy as np

UNLABELED = 255


class NetpbmError(ValueError):
    """Malformed or truncated Netpbm file."""


def _parse_header(data, magic, path):
    if data[:2] != magic:
        raise NetpbmError(f"{path}: expected magic {magic.decode()} at byte offset 0, found {data[:2]!r}")
    pos = 2
    values = []
    while len(values) < 3:
        # skip whitespace and comments
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NetpbmError(f"{path}: malformed header, expected a number at byte offset {start}")
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise NetpbmError(f"{path}: missing whitespace after header at byte offset {pos}")
    width, height, maxval = values
    if width < 1 or height < 1:
        raise NetpbmError(f"{path}: invalid size {width}x{height} in header")
    if maxval != 255:
        raise NetpbmError(f"{path}: only 8-bit files (maxval 255) are supported, found maxval {maxval}")
    return width, height, pos + 1


def _read(path, magic, channels):
    data = Path(path).read_bytes()
    w, h, offset = _parse_header(data, magic, path)
    need = w * h * channels
    have = len(data) - offset
    if have < need:
        raise NetpbmError(f"{path}: truncated payload, expected {need} bytes from byte offset {offset}, found {have}")
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    return raw.reshape(h, w, channels) if channels > 1 else raw.reshape(h, w)


def _write(path, magic, arr):
    h, w = arr.shape[:2]
    header = f"{magic}\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def read_rgb(path):
    """Raw (H,W,3) uint8 pixels of a P6 file."""
    return _read(path, b"P6", 3).copy()


def write_rgb(rgb, path):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"expected (H,W,3) uint8, got {rgb.shape} {rgb.dtype}")
    _write(path, "P6", rgb)


def read_image(path):
    """(3,H,W) float32 image scaled to [-1, 1] as v / 127.5 - 1."""
    rgb = _read(path, b"P6", 3)
    return (rgb.transpose(2, 0, 1).astype(np.float32) / np.float32(127.5) - np.float32(1.0))


def image_to_bytes(image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a (3,H,W) image, got {img.shape}")
    return np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_image(image, path):
    _write(path, "P6", image_to_bytes(image))


def read_labelmap(path):
    """(H,W) uint8 class ids; 255 marks unlabeled pixels."""
    return _read(path, b"P5", 1).copy()


def write_labelmap(labels, path, allow_unlabeled=False):
    """Write class ids 0..254; 255 is accepted only with ``allow_unlabeled``."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got {labels.shape}")
    top = UNLABELED if allow_unlabeled else UNLABELED - 1
    bad = (labels < 0) | (labels > top)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(
            f"class id {int(labels[y, x])} at pixel ({y}, {x}) collides with the reserved range "
            f"(ids must be 0..{top})"
        )
    _write(path, "P5", labels.astype(np.uint8))


def read_mask(path):
    """(H,W) uint8 {0,1} change mask; any nonzero byte counts as changed."""
    return (_read(path, b"P5", 1) != 0).astype(np.uint8)


def write_mask(mask, path):
    _write(path, "P5", (np.asarray(mask) != 0).astype(np.uint8) * 255)


def read_palette(path):
    """``class_id R G B`` lines -> {class_id: (r, g, b)}."""
    palette = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'class_id R G B', got {raw!r}")
        cid, r, g, b = (int(p) for p in parts)
        if not all(0 <= v <= 255 for v in (r, g, b)):
            raise ValueError(f"{path}:{lineno}: color components must be 0..255")
        palette[cid] = (r, g, b)
    return palette


def write_palette(palette, path):
    lines = [f"{cid} {r} {g} {b}" for cid, (r, g, b) in sorted(palette.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def default_palette(num_classes):
    """Distinct colors; class 0 (no change) is black."""
    palette = {0: (0, 0, 0), UNLABELED: (255, 255, 255)}
    for c in range(1, num_classes):
        hue = (c - 1) / max(num_classes - 1, 1)
        palette[c] = tuple(int(round(255 * v)) for v in _hsv_to_rgb(hue, 0.85, 0.95))
    return palette


def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def colorize(labels, palette):
    """(H,W,3) uint8 rendering of a label map."""
    labels = np.asarray(labels)
    missing = sorted(set(np.unique(labels).tolist()) - set(palette))
    if missing:
        raise KeyError(f"palette has no color for class ids {missing}")
    lut = np.zeros((max(max(palette), int(labels.max())) + 1, 3), dtype=np.uint8)
    for cid, rgb in palette.items():
        lut[cid] = rgb
    return lut[labels]
