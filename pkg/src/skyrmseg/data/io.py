"""Greyscale image and mask files.

Images: binary PGM (P5, maxval 255) or 8-bit greyscale PNG, normalised to
[0, 1]. Masks: greyscale PNG with 0 = background, 128 = skyrmion,
255 = defect.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError, FormatError

IMAGE_SUFFIXES = (".pgm", ".png")
MASK_LEVELS = np.array([0, 128, 255], dtype=np.uint8)

_PGM_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def _read_pgm(path):
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if not m:
        raise FormatError(f"{path}: not a binary (P5) PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: PGM maxval {maxval} unsupported (need 255)")
    payload = data[m.end():m.end() + w * h]
    if len(payload) != w * h:
        raise FormatError(f"{path}: PGM payload truncated ({len(payload)} of {w * h} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def _read_png(path):
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"{path}: expected PNG data, found {im.format}")
            if im.mode != "L":
                raise FormatError(f"{path}: PNG mode {im.mode!r} is not 8-bit greyscale")
            return np.array(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: unreadable PNG ({exc})") from exc


def read_grey8(path):
    """Raw uint8 pixels of a PGM or PNG file."""
    suffix = Path(path).suffix.lower()
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    if suffix == ".pgm":
        return _read_pgm(path)
    if suffix == ".png":
        return _read_png(path)
    raise FormatError(f"{path}: unsupported image format {suffix!r}")


def write_grey8(path, pixels):
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise FormatError(f"{path}: expected a 2-D array, got shape {pixels.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        h, w = pixels.shape
        Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())
    elif suffix == ".png":
        Image.fromarray(pixels, mode="L").save(path, format="PNG")
    else:
        raise FormatError(f"{path}: unsupported image format {suffix!r}")


def load_image(path):
    return read_grey8(path).astype(np.float32) / np.float32(255.0)


def to_uint8(image):
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, image):
    write_grey8(path, to_uint8(image))


def load_mask(path, num_classes=3, collapse_defects=False):
    """Decode a mask file into class indices.

    With ``collapse_defects`` a 3-class file is read as its 2-class view
    (defects become background).
    """
    raw = read_grey8(path)
    mask = np.full(raw.shape, 255, dtype=np.uint8)
    for cls, level in enumerate(MASK_LEVELS):
        mask[raw == level] = cls
    bad = np.argwhere(mask == 255)
    if bad.size:
        r, c = bad[0]
        raise DataError(f"{path}: invalid mask value {raw[r, c]} at pixel (row={r}, col={c}); "
                        f"expected one of 0, 128, 255")
    if collapse_defects:
        mask[mask == 2] = 0
    too_big = np.argwhere(mask >= num_classes)
    if too_big.size:
        r, c = too_big[0]
        raise DataError(f"{path}: class {mask[r, c]} at pixel (row={r}, col={c}) "
                        f"exceeds num_classes={num_classes}")
    return mask


def save_mask(path, mask):
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() > 2):
        raise DataError(f"{path}: mask contains class indices outside 0..2")
    write_grey8(path, MASK_LEVELS[mask.astype(np.intp)])


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{directory}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
