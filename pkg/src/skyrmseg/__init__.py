"""Skyrmion segmentation with a numpy U-Net."""

from .errors import (CheckpointError, ConfigError, DataError, ShapeError, SkyrmError,
                     TrainingAborted)
from .unet import BACKGROUND, DEFECT, SKYRMION, Model, UNetConfig, init_params, predict

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND", "SKYRMION", "DEFECT", "UNetConfig", "Model", "init_params", "predict",
    "SkyrmError", "ConfigError", "DataError", "ShapeError", "CheckpointError",
    "TrainingAborted", "__version__",
]
