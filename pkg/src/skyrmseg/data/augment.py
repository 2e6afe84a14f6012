"""Online data augmentation and test-time augmentation (TTA).

Geometric transforms are written as inverse coordinate maps, so the mask
is resampled with exactly the same map as the image (nearest neighbour for
the mask, bilinear for the image). Out-of-frame lookups use reflection.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import ConfigError
from .dataset import Sample


@dataclass
class AugmentSpec:
    rot90: bool = True
    noise: bool = True
    noise_sigma_max: float = 0.05
    shift: bool = True
    shift_max_fraction: float = 0.1
    scale: bool = True
    scale_max_factor: float = 0.2
    contrast: bool = True
    contrast_limit: float = 0.3
    brightness: bool = True
    brightness_limit: float = 0.3
    inversion: bool = False
    probability: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, bool) and v < 0:
                raise ConfigError(f"augment {f.name} must be >= 0, got {v}")
        if self.scale_max_factor >= 1:
            raise ConfigError("scale_max_factor must be < 1")
        if self.probability > 1:
            raise ConfigError("probability must be <= 1")

    @classmethod
    def disabled(cls):
        return cls(rot90=False, noise=False, shift=False, scale=False,
                   contrast=False, brightness=False, inversion=False)

    @property
    def any_enabled(self):
        return any((self.rot90, self.noise, self.shift, self.scale,
                    self.contrast, self.brightness, self.inversion))


def reflect_index(idx, n):
    """Map integer indices onto [0, n) by mirror reflection without edge repeat."""
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx > n - 1, period - idx, idx)


def shift_pair(image, mask, dy, dx):
    h, w = image.shape
    rows = reflect_index(np.arange(h) - dy, h)
    cols = reflect_index(np.arange(w) - dx, w)
    return image[np.ix_(rows, cols)], mask[np.ix_(rows, cols)]


def _source_coords(n, factor):
    c = (n - 1) / 2.0
    return c + (np.arange(n) - c) / factor


def scale_pair(image, mask, factor):
    """Zoom about the image centre; output keeps the input size."""
    h, w = image.shape
    qy, qx = _source_coords(h, factor), _source_coords(w, factor)
    ny = reflect_index(np.rint(qy).astype(np.intp), h)
    nx = reflect_index(np.rint(qx).astype(np.intp), w)
    new_mask = mask[np.ix_(ny, nx)]

    y0 = np.floor(qy).astype(np.intp)
    x0 = np.floor(qx).astype(np.intp)
    fy = (qy - y0).astype(np.float32)[:, None]
    fx = (qx - x0).astype(np.float32)[None, :]
    ya, yb = reflect_index(y0, h), reflect_index(y0 + 1, h)
    xa, xb = reflect_index(x0, w), reflect_index(x0 + 1, w)
    top = image[np.ix_(ya, xa)] * (1 - fx) + image[np.ix_(ya, xb)] * fx
    bot = image[np.ix_(yb, xa)] * (1 - fx) + image[np.ix_(yb, xb)] * fx
    return (top * (1 - fy) + bot * fy).astype(image.dtype), new_mask


def augment_sample(sample: Sample, spec: AugmentSpec, seed) -> Sample:
    """Apply each enabled transform with independent probability ``spec.probability``."""
    rng = np.random.default_rng(seed)
    img = np.asarray(sample.image, dtype=np.float32)
    mask = sample.mask
    h, w = img.shape
    p = spec.probability

    def coin():
        return rng.random() < p

    if spec.rot90 and coin():
        k = int(rng.integers(1, 4)) if h == w else 2
        img, mask = np.rot90(img, k), np.rot90(mask, k)
    if spec.shift and coin():
        my, mx = int(spec.shift_max_fraction * h), int(spec.shift_max_fraction * w)
        dy, dx = int(rng.integers(-my, my + 1)), int(rng.integers(-mx, mx + 1))
        img, mask = shift_pair(img, mask, dy, dx)
    if spec.scale and coin():
        m = spec.scale_max_factor
        img, mask = scale_pair(img, mask, float(rng.uniform(1 - m, 1 + m)))
    if spec.contrast and coin():
        u = rng.uniform(-spec.contrast_limit, spec.contrast_limit)
        img = 0.5 + (1 + u) * (img - 0.5)
    if spec.brightness and coin():
        img = img + rng.uniform(-spec.brightness_limit, spec.brightness_limit)
    if spec.noise and coin():
        sigma = rng.uniform(0, spec.noise_sigma_max)
        img = img + rng.normal(0.0, sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)
    if spec.inversion and coin():
        img = 1.0 - img
    return Sample(np.ascontiguousarray(img, dtype=np.float32),
                  np.ascontiguousarray(mask), sample.source_id)


def random_crop(sample: Sample, size, rng):
    h, w = sample.image.shape
    ch, cw = size
    if (ch, cw) == (h, w):
        return sample
    if ch > h or cw > w:
        raise ConfigError(f"crop {ch}x{cw} larger than image {h}x{w}")
    y = int(rng.integers(0, h - ch + 1))
    x = int(rng.integers(0, w - cw + 1))
    return Sample(sample.image[y:y + ch, x:x + cw], sample.mask[y:y + ch, x:x + cw],
                  sample.source_id)


# ---------------------------------------------------------------------------
# Test-time augmentation
# ---------------------------------------------------------------------------

def _rot(k):
    return (lambda a: np.rot90(a, k, axes=(-2, -1)),
            lambda a: np.rot90(a, -k, axes=(-2, -1)))


def _flip(axis):
    f = lambda a: np.flip(a, axis=axis)  # noqa: E731
    return f, f


def _identity():
    f = lambda a: a  # noqa: E731
    return f, f


TTA_TRANSFORMS = {
    "identity": _identity(),
    "rot90": _rot(1),
    "rot180": _rot(2),
    "rot270": _rot(3),
    "hflip": _flip(-1),
    "vflip": _flip(-2),
}
TTA_DEFAULT = ("rot90", "rot180", "rot270")
TTA_FALLBACK = ("identity", "hflip", "vflip")


def tta_transforms_for(shape, transforms=None):
    if transforms is not None:
        return tuple(transforms)
    h, w = shape[-2:]
    return TTA_DEFAULT if h == w else TTA_FALLBACK


def tta_predict(predict_proba, image, transforms=None):
    """Mean class probabilities over transformed copies of a 2-D image.

    ``predict_proba`` maps an (h, w) image to (1, K, h, w) probabilities. Each
    prediction is mapped back to the original frame before averaging. For
    non-square images the rotation set falls back to identity/flips.
    """
    image = np.asarray(image, dtype=np.float32)
    names = tta_transforms_for(image.shape, transforms)
    acc = None
    for name in names:
        fwd, inv = TTA_TRANSFORMS[name]
        p = inv(predict_proba(np.ascontiguousarray(fwd(image)))[0])
        acc = p.astype(np.float64) if acc is None else acc + p
    return (acc / len(names)).astype(np.float32)
