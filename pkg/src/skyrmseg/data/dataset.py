"""Samples, labelled datasets and their on-disk layout.

Directory layout::

    <root>/<split>/images/<stem>.png|.pgm
    <root>/<split>/masks/<stem>.png
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from . import io

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class Sample:
    image: np.ndarray  # float32 (h, w) in [0, 1]
    mask: np.ndarray  # uint8 (h, w) class indices
    source_id: str = ""

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DataError(f"{self.source_id}: image {self.image.shape} and mask "
                            f"{self.mask.shape} differ")


@dataclass
class LabeledDataset:
    splits: dict = field(default_factory=dict)
    num_classes: int = 3

    def __getitem__(self, split):
        return self.splits[split]

    def two_class_view(self):
        """Copy with defects folded into background."""
        out = {}
        for name, samples in self.splits.items():
            out[name] = [Sample(s.image, np.where(s.mask == 2, 0, s.mask).astype(np.uint8),
                                s.source_id) for s in samples]
        return LabeledDataset(out, num_classes=2)

    def validate(self):
        for name, samples in self.splits.items():
            for s in samples:
                if s.mask.size and s.mask.max() >= self.num_classes:
                    raise DataError(f"{name}/{s.source_id}: mask class {s.mask.max()} "
                                    f">= num_classes {self.num_classes}")


def stack(samples):
    """(images (n, h, w) float32, masks (n, h, w) uint8)."""
    return (np.stack([s.image for s in samples]).astype(np.float32),
            np.stack([s.mask for s in samples]).astype(np.uint8))


def load_split(directory, num_classes=3):
    directory = Path(directory)
    samples = []
    for img_path in io.list_images(directory / "images"):
        mask_path = directory / "masks" / (img_path.stem + ".png")
        if not mask_path.exists():
            raise DataError(f"{img_path}: no matching mask {mask_path}")
        image = io.load_image(img_path)
        mask = io.load_mask(mask_path, num_classes, collapse_defects=num_classes == 2)
        if image.shape != mask.shape:
            raise DataError(f"{img_path} {image.shape} and {mask_path} {mask.shape} differ in size")
        samples.append(Sample(image, mask, img_path.stem))
    return samples


def load_dataset(root, num_classes=3, splits=SPLITS):
    """Load every split present under ``root``.

    For ``num_classes=2`` defect pixels (255) are read as background.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset directory not found")
    out = {}
    for split in splits:
        if (root / split / "images").is_dir():
            out[split] = load_split(root / split, num_classes)
    if not out:
        raise DataError(f"{root}: no split directories with images/ found")
    return LabeledDataset(out, num_classes)


def save_dataset(root, dataset: LabeledDataset, image_suffix=".png"):
    root = Path(root)
    for split, samples in dataset.splits.items():
        for s in samples:
            io.save_image(root / split / "images" / f"{s.source_id}{image_suffix}", s.image)
            io.save_mask(root / split / "masks" / f"{s.source_id}.png", s.mask)


@dataclass
class SplitStats:
    images: int
    sources: int
    skyrmion_fraction: float
    skyrmion_count: int
    defect_fraction: float = 0.0


def split_summary(dataset: LabeledDataset, connectivity=8):
    """Per-split image counts, skyrmion pixel fraction and instance count."""
    from ..evaluation import count_components

    summary = {}
    for split, samples in dataset.splits.items():
        if not samples:
            log.warning("split %r is empty", split)
            summary[split] = SplitStats(0, 0, 0.0, 0)
            continue
        total = sum(s.mask.size for s in samples)
        sky = sum(int(np.count_nonzero(s.mask == 1)) for s in samples)
        dfx = sum(int(np.count_nonzero(s.mask == 2)) for s in samples)
        count = sum(count_components(s.mask, 1, connectivity) for s in samples)
        sources = {s.source_id.split("_")[0] for s in samples}
        summary[split] = SplitStats(len(samples), len(sources), sky / total, count, dfx / total)
    return summary
