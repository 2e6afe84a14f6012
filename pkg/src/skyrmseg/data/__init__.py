from .augment import AugmentSpec, augment_sample, tta_predict
from .dataset import LabeledDataset, Sample, load_dataset, save_dataset, split_summary
from .io import load_image, load_mask, save_image, save_mask
from .synth import SynthSpec, synth_generate

__all__ = [
    "AugmentSpec", "augment_sample", "tta_predict",
    "LabeledDataset", "Sample", "load_dataset", "save_dataset", "split_summary",
    "load_image", "load_mask", "save_image", "save_mask",
    "SynthSpec", "synth_generate",
]
