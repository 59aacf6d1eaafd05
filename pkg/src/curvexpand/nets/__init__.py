"""Denoising networks: base UNet, SPADE control branch, text encoder, training."""

from .blocks import ConfigError, SpadeParams, spade_normalize
from .config import ModelConfig, parse_spade_stages
from .control import SCPControlNet, SegmapPyramid, condition_feature_extractor, scp_predict
from .text import TextEmbedding, TextEncoder, text_encode
from .train import (
    TrainHyperparams,
    TrainingDiverged,
    TrainResult,
    Weights,
    load_weights,
    save_weights,
    train_base,
    train_control,
)
from .unet import BaseUNet, base_predict

__all__ = [
    "BaseUNet",
    "ConfigError",
    "ModelConfig",
    "SCPControlNet",
    "SegmapPyramid",
    "SpadeParams",
    "TextEmbedding",
    "TextEncoder",
    "TrainHyperparams",
    "TrainResult",
    "TrainingDiverged",
    "Weights",
    "base_predict",
    "condition_feature_extractor",
    "load_weights",
    "parse_spade_stages",
    "save_weights",
    "scp_predict",
    "spade_normalize",
    "text_encode",
    "train_base",
    "train_control",
]
