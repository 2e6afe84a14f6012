"""Pixel metrics, instance statistics and interpretability probes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ShapeError
from .unet import BACKGROUND, CLASS_NAMES, SKYRMION


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


def _positive(mask, positive):
    if callable(positive):
        return np.asarray(positive(mask), dtype=bool)
    return np.isin(mask, np.atleast_1d(positive))


def confusion_from_masks(pred, truth, positive=(SKYRMION,)):
    """Pixel tallies. ``positive`` lists the classes counted as positive
    (default skyrmion; defects and background are negative) or is a
    callable mask -> bool array."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    p = _positive(pred, positive)
    t = _positive(truth, positive)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp=tp, tn=int(p.size) - tp - fp - fn, fp=fp, fn=fn)


def mcc(counts: ConfusionCounts):
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    tp, tn, fp, fn = (float(v) for v in (counts.tp, counts.tn, counts.fp, counts.fn))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    value = (tp * tn - fp * fn) / math.sqrt(denom)
    return max(-1.0, min(1.0, value))


def mask_mcc(pred, truth, positive=(SKYRMION,)):
    return mcc(confusion_from_masks(pred, truth, positive))


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------

@dataclass
class Component:
    label: int
    size: int
    centroid: tuple
    pixels: np.ndarray = field(repr=False)  # (k, 2) row/col coordinates


def _structure(connectivity):
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise ConfigError(f"connectivity must be 4 or 8, got {connectivity}")


def label_components(mask, class_id, connectivity=8):
    """(label image, count); labels are numbered in raster order of each
    component's first pixel."""
    if not 0 <= class_id <= 2:
        raise ConfigError(f"invalid class_id {class_id}")
    labels, n = ndimage.label(np.asarray(mask) == class_id, structure=_structure(connectivity))
    return labels, n


def count_components(mask, class_id, connectivity=8):
    return label_components(mask, class_id, connectivity)[1]


def component_sizes(mask, class_id, connectivity=8):
    labels, n = label_components(mask, class_id, connectivity)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    return np.bincount(labels.ravel(), minlength=n + 1)[1:]


def connected_components(mask, class_id, connectivity=8):
    labels, n = label_components(mask, class_id, connectivity)
    out = []
    if n == 0:
        return out
    slices = ndimage.find_objects(labels)
    for lab, sl in enumerate(slices, start=1):
        rows, cols = np.nonzero(labels[sl] == lab)
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        out.append(Component(lab, int(rows.size), (float(rows.mean()), float(cols.mean())),
                             np.stack([rows, cols], axis=1)))
    return out


def speckle_count(mask, class_id=SKYRMION, max_size=10, connectivity=8):
    """Number of components of ``class_id`` with at most ``max_size`` pixels."""
    return int(np.count_nonzero(component_sizes(mask, class_id, connectivity) <= max_size))


@dataclass
class SizeHistogram:
    edges: np.ndarray
    counts: np.ndarray
    sizes: np.ndarray

    @property
    def mean(self):
        return float(self.sizes.mean()) if self.sizes.size else float("nan")

    @property
    def median(self):
        return float(np.median(self.sizes)) if self.sizes.size else float("nan")

    @property
    def empty(self):
        return self.sizes.size == 0

    def modes(self):
        """Bin centres of local maxima, strongest first."""
        c = self.counts
        peaks = []
        for i in range(len(c)):
            left = c[i - 1] if i > 0 else -1
            right = c[i + 1] if i + 1 < len(c) else -1
            if c[i] > 0 and c[i] > left and c[i] >= right:
                peaks.append(i)
        peaks.sort(key=lambda i: -c[i])
        return [0.5 * (self.edges[i] + self.edges[i + 1]) for i in peaks]

    @property
    def secondary_mode(self):
        m = self.modes()
        return m[1] if len(m) > 1 else None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, n in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([f"{lo:g}", f"{hi:g}", int(n)])


def default_bins(width=25, upper=2000):
    return np.arange(0, upper + width, width, dtype=np.float64)


def size_histogram(masks, class_id=SKYRMION, bins=None, connectivity=8):
    """Histogram of component sizes (pixels) over a collection of masks.

    Sizes beyond the last edge are clipped into the last bin.
    """
    edges = default_bins() if bins is None else np.asarray(bins, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise ConfigError("bins needs at least two edges")
    if np.any(np.diff(edges) <= 0):
        raise ConfigError("bin edges must be strictly increasing")
    sizes = [component_sizes(m, class_id, connectivity) for m in masks]
    sizes = np.concatenate(sizes) if sizes else np.zeros(0, dtype=np.int64)
    clipped = np.clip(sizes, edges[0], edges[-1])
    counts, _ = np.histogram(clipped, bins=edges)
    return SizeHistogram(edges, counts, sizes)


# ---------------------------------------------------------------------------
# Interpretability probes
# ---------------------------------------------------------------------------

@dataclass
class ProbeResult:
    levels: np.ndarray
    dominant: np.ndarray
    fractions: np.ndarray  # (levels, num_classes)

    def transitions(self):
        """Levels at which the dominant class differs from the previous level."""
        d = self.dominant
        return [int(self.levels[i]) for i in range(1, len(d)) if d[i] != d[i - 1]]

    def write_csv(self, path):
        k = self.fractions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "dominant_class"] + [f"frac_{CLASS_NAMES[c]}" for c in range(k)])
            for lvl, dom, fr in zip(self.levels, self.dominant, self.fractions):
                w.writerow([int(lvl), CLASS_NAMES[int(dom)]] + [f"{v:.6f}" for v in fr])


def class_fractions(mask, num_classes):
    return np.bincount(np.asarray(mask).ravel(), minlength=num_classes)[:num_classes] / mask.size


def dominant_class(mask, num_classes):
    """Majority class; ties go to the lower index."""
    return int(np.argmax(np.bincount(np.asarray(mask).ravel(), minlength=num_classes)))


def greyscale_probe(predict, num_classes, image_size=(64, 64), levels=range(256), batch=16):
    """Predict on uniform images of each 8-bit level.

    ``predict`` maps an (n, h, w) float stack to (n, h, w) class masks.
    """
    levels = np.asarray(list(levels))
    dominant = np.zeros(len(levels), dtype=np.int64)
    fractions = np.zeros((len(levels), num_classes))
    for s in range(0, len(levels), batch):
        lv = levels[s:s + batch]
        stack = np.broadcast_to((lv / 255.0).astype(np.float32)[:, None, None],
                                (len(lv),) + tuple(image_size)).copy()
        masks = predict(stack)
        for j, m in enumerate(masks):
            fractions[s + j] = class_fractions(m, num_classes)
            dominant[s + j] = dominant_class(m, num_classes)
    return ProbeResult(levels, dominant, fractions)


@dataclass
class InversionReport:
    fractions_original: np.ndarray
    fractions_inverted: np.ndarray
    agreement: float
    mask_original: np.ndarray = field(repr=False)
    mask_inverted: np.ndarray = field(repr=False)

    def as_dict(self):
        return {
            "fractions_original": [float(v) for v in self.fractions_original],
            "fractions_inverted": [float(v) for v in self.fractions_inverted],
            "agreement": self.agreement,
        }


def inversion_experiment(predict, image, num_classes):
    """Compare predictions on an image and on its negative 1 - image."""
    image = np.asarray(image, dtype=np.float32)
    m0 = predict(image)
    m1 = predict((1.0 - image).astype(np.float32))
    return InversionReport(
        fractions_original=class_fractions(m0, num_classes),
        fractions_inverted=class_fractions(m1, num_classes),
        agreement=float(np.mean(m0 == m1)),
        mask_original=m0,
        mask_inverted=m1,
    )


@dataclass
class ImageMetrics:
    name: str
    counts: ConfusionCounts
    mcc: float
    speckles: int


def evaluate_masks(named_pairs, positive=(SKYRMION,), speckle_max=10, connectivity=8):
    """Per-image metrics for (name, pred, truth) triples plus the pooled MCC."""
    rows = []
    pooled = ConfusionCounts()
    for name, pred, truth in named_pairs:
        c = confusion_from_masks(pred, truth, positive)
        pooled = pooled + c
        rows.append(ImageMetrics(name, c, mcc(c),
                                 speckle_count(pred, SKYRMION, speckle_max, connectivity)))
    return rows, mcc(pooled)


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "tp", "tn", "fp", "fn", "mcc", "speckles"])
        for r in rows:
            c = r.counts
            w.writerow([r.name, c.tp, c.tn, c.fp, c.fn, f"{r.mcc:.6f}", r.speckles])


def render_histogram_png(path, hist: SizeHistogram, reference: SizeHistogram | None = None,
                         title="skyrmion size distribution"):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    centres = 0.5 * (hist.edges[:-1] + hist.edges[1:])
    width = np.diff(hist.edges)
    if reference is not None:
        ax.bar(centres, reference.counts, width=width, alpha=0.5, label="labels")
    ax.bar(centres, hist.counts, width=width, alpha=0.5, label="predictions")
    ax.set_xlabel("component size (pixels)")
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.legend()
    nz = np.nonzero(hist.counts + (reference.counts if reference is not None else 0))[0]
    if nz.size:
        ax.set_xlim(hist.edges[0], hist.edges[min(nz[-1] + 2, len(hist.edges) - 1)])
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


def render_probe_png(path, probe: ProbeResult):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for c in range(probe.fractions.shape[1]):
        ax.plot(probe.levels, probe.fractions[:, c], label=CLASS_NAMES[c])
    ax.set_xlabel("grey level")
    ax.set_ylabel("pixel fraction")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


__all__ = [
    "BACKGROUND", "SKYRMION", "ConfusionCounts", "confusion_from_masks", "mcc", "mask_mcc",
    "connected_components", "label_components", "count_components", "component_sizes",
    "speckle_count", "SizeHistogram", "size_histogram", "greyscale_probe", "ProbeResult",
    "inversion_experiment", "InversionReport", "evaluate_masks", "write_metrics_csv",
]
