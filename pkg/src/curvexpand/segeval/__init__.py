"""Segmentation evaluation: metrics, segmenter protocol, baselines, feature distance, reports."""

from .augment import Augmentation, baseline_augment, expand_with_augmentation, sample_augmentation
from .fid import DiagonalCovarianceFallback, feature_distance, frechet_distance, project_features
from .metrics import ConfusionCounts, confusion, f1, miou
from .report import ComparisonRow, compare_methods, to_csv, to_markdown
from .segmenter import EvalReport, SegHyperparams, SmallUNet, select_best, train_segmenter

__all__ = [
    "Augmentation",
    "ComparisonRow",
    "ConfusionCounts",
    "DiagonalCovarianceFallback",
    "EvalReport",
    "SegHyperparams",
    "SmallUNet",
    "baseline_augment",
    "compare_methods",
    "confusion",
    "expand_with_augmentation",
    "f1",
    "feature_distance",
    "frechet_distance",
    "miou",
    "project_features",
    "sample_augmentation",
    "select_best",
    "to_csv",
    "to_markdown",
    "train_segmenter",
]
