"""Synthetic Kerr-microscopy-like images with exact labels.

Each frame has a light-grey background with a linear illumination gradient,
dark elliptical skyrmions and (optionally) clipped-bright defects surrounded
by a dark shadow crescent. The shadow is as dark as a skyrmion, so intensity
alone cannot separate the two; the defect label covers blob and shadow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, GenerationError
from .dataset import LabeledDataset, Sample

SPLIT_ORDER = ("train", "val", "test")


@dataclass
class SynthSpec:
    image_size: int = 128
    n_train: int = 64
    n_val: int = 16
    n_test: int = 16
    skyrmion_fraction: float = 0.19
    fraction_jitter: float = 0.03
    radius_mean: float = 6.0
    radius_sd: float = 1.5
    radius_min: float = 3.0
    radius_max: float = 12.0
    max_eccentricity: float = 1.5
    background_grey: float = 0.7
    skyrmion_grey: float = 0.25
    grey_jitter: float = 0.05
    defects_mean: float = 2.0
    defect_radius: float = 7.0
    defect_grey: float = 0.97
    shadow_grey: float = 0.25
    shadow_width: int = 4
    noise_min: float = 0.02
    noise_max: float = 0.10
    gradient_max: float = 0.15
    blur_sigma: float = 0.8
    min_gap: int = 2
    frames_per_video: int = 20
    max_attempts: int = 4000

    def __post_init__(self):
        if self.image_size < 8:
            raise ConfigError("image_size must be >= 8")
        if not 0 <= self.skyrmion_fraction < 1:
            raise ConfigError("skyrmion_fraction must be in [0, 1)")
        if self.max_eccentricity < 1:
            raise ConfigError("max_eccentricity must be >= 1")
        if self.radius_min <= 0 or self.radius_max < self.radius_min:
            raise ConfigError("need 0 < radius_min <= radius_max")
        if self.noise_max < self.noise_min:
            raise ConfigError("noise_max must be >= noise_min")

    def counts(self):
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}


def ellipse_mask(shape, cy, cx, a, b, theta):
    """Boolean mask of an ellipse with semi-axes a (along theta) and b."""
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _disk_struct(r):
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def _sample_radius(spec, rng):
    r = rng.normal(spec.radius_mean, spec.radius_sd)
    return float(np.clip(r, spec.radius_min, spec.radius_max))


def _defect(spec, rng, size):
    """Returns (blob, shadow) boolean masks for one defect."""
    blob = np.zeros((size, size), dtype=bool)
    r0 = max(2.0, rng.normal(spec.defect_radius, spec.defect_radius * 0.25))
    margin = int(r0 * 1.6 + spec.shadow_width + 1)
    if 2 * margin >= size:
        margin = size // 2 - 1
    cy, cx = rng.uniform(margin, size - margin, 2)
    for _ in range(int(rng.integers(2, 5))):
        oy, ox = rng.normal(0, r0 * 0.4, 2)
        rr = r0 * rng.uniform(0.5, 0.9)
        blob |= ellipse_mask(blob.shape, cy + oy, cx + ox, rr, rr * rng.uniform(0.6, 1.0),
                             rng.uniform(0, np.pi))
    ring = ndimage.binary_dilation(blob, _disk_struct(spec.shadow_width)) & ~blob
    yy, xx = np.mgrid[0:size, 0:size]
    ang = rng.uniform(0, 2 * np.pi)
    side = (yy - cy) * np.sin(ang) + (xx - cx) * np.cos(ang)
    shadow = ring & (side > -0.3 * r0)
    return blob, shadow


def synth_image(spec: SynthSpec, rng, target_fraction=None):
    """One (image, 3-class mask, radii) triple."""
    n = spec.image_size
    mask = np.zeros((n, n), dtype=np.uint8)
    image = np.full((n, n), spec.background_grey, dtype=np.float64)
    yy, xx = np.mgrid[0:n, 0:n]
    ang = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0, spec.gradient_max)
    ramp = (np.cos(ang) * (xx / (n - 1) - 0.5) + np.sin(ang) * (yy / (n - 1) - 0.5)) * 2 * amp
    image += ramp

    occupied = np.zeros((n, n), dtype=bool)
    # defects_mean is quoted per 128x128 frame; keep the defect density fixed
    lam = spec.defects_mean * (n / 128.0) ** 2
    for _ in range(int(rng.poisson(lam)) if lam > 0 else 0):
        blob, shadow = _defect(spec, rng, n)
        image[shadow] = spec.shadow_grey + rng.uniform(-spec.grey_jitter, spec.grey_jitter)
        image[blob] = spec.defect_grey + rng.uniform(0, 1 - spec.defect_grey)
        mask[blob | shadow] = 2
        occupied |= blob | shadow

    if target_fraction is None:
        target_fraction = spec.skyrmion_fraction
    target = target_fraction * n * n
    gap = _disk_struct(spec.min_gap) if spec.min_gap > 0 else np.ones((1, 1), bool)
    blocked = ndimage.binary_dilation(occupied, gap) if occupied.any() else occupied.copy()
    radii = []
    placed = 0
    failures = 0
    while placed < target:
        if failures >= spec.max_attempts:
            raise GenerationError(
                f"could not reach skyrmion fraction {target_fraction:.3f} "
                f"(got {placed / (n * n):.3f}) after {spec.max_attempts} rejected placements")
        r = _sample_radius(spec, rng)
        e = rng.uniform(1.0, spec.max_eccentricity)
        a, b = r * np.sqrt(e), r / np.sqrt(e)
        reach = int(np.ceil(a)) + 1
        if 2 * reach >= n:
            failures += 1
            continue
        # centre drawn uniformly among free pixels, then jittered sub-pixel
        free = ~blocked[reach:n - 1 - reach, reach:n - 1 - reach]
        cand = np.flatnonzero(free)
        if cand.size == 0:
            failures += 1
            continue
        k = cand[rng.integers(cand.size)]
        cy = reach + k // free.shape[1] + rng.uniform(0, 1)
        cx = reach + k % free.shape[1] + rng.uniform(0, 1)
        y0, y1 = int(cy) - reach, int(cy) + reach + 2
        x0, x1 = int(cx) - reach, int(cx) + reach + 2
        y0, x0 = max(y0, 0), max(x0, 0)
        y1, x1 = min(y1, n), min(x1, n)
        local = ellipse_mask((y1 - y0, x1 - x0), cy - y0, cx - x0, a, b, rng.uniform(0, np.pi))
        if not local.any() or (blocked[y0:y1, x0:x1] & local).any():
            failures += 1
            continue
        mask[y0:y1, x0:x1][local] = 1
        image[y0:y1, x0:x1][local] = (spec.skyrmion_grey
                                      + rng.uniform(-spec.grey_jitter, spec.grey_jitter))
        g = spec.min_gap
        by0, bx0 = max(y0 - g, 0), max(x0 - g, 0)
        by1, bx1 = min(y1 + g, n), min(x1 + g, n)
        grown = np.zeros((by1 - by0, bx1 - bx0), dtype=bool)
        grown[y0 - by0:y1 - by0, x0 - bx0:x1 - bx0] = local
        blocked[by0:by1, bx0:bx1] |= ndimage.binary_dilation(grown, gap)
        placed += int(local.sum())
        radii.append(r)
        failures = 0

    if spec.blur_sigma > 0:
        image = ndimage.gaussian_filter(image, spec.blur_sigma, mode="reflect")
    sigma = rng.uniform(spec.noise_min, spec.noise_max)
    image = image + rng.normal(0.0, sigma, image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask, radii


def synth_generate(spec: SynthSpec, seed=0, splits=SPLIT_ORDER) -> LabeledDataset:
    """Deterministic 3-class dataset; use ``two_class_view()`` for the 2-class labels."""
    counts = spec.counts()
    out = {}
    for split_idx, split in enumerate(SPLIT_ORDER):
        if split not in splits or counts[split] <= 0:
            continue
        samples = []
        for i in range(counts[split]):
            rng = np.random.default_rng([seed, split_idx, i])
            frac = spec.skyrmion_fraction
            if spec.fraction_jitter > 0 and frac > 0:
                frac = max(0.0, frac + rng.uniform(-spec.fraction_jitter, spec.fraction_jitter))
            image, mask, _ = synth_image(spec, rng, frac)
            video = i // max(1, spec.frames_per_video)
            samples.append(Sample(image, mask, f"{split}{video:02d}_{i:04d}"))
        out[split] = samples
    return LabeledDataset(out, num_classes=3)
