"""Glioma segmentation toolkit: NIfTI I/O, intensity harmonization,
first-order radiomics, clustered fold assignment, a from-scratch autodiff
engine, a hierarchical 3D transformer, training, and BraTS-style metrics.

Everything runs on numpy/scipy; no deep-learning framework is required.
"""

from .errors import (
    AlignmentError,
    CheckpointError,
    ConfigError,
    DegenerateInputError,
    EmptyForegroundError,
    GliomaForgeError,
    HeaderError,
    InsufficientDataError,
    LabelError,
    PairingError,
    ShapeError,
    TrainingDivergedError,
    TruncatedDataError,
    UnsupportedDataTypeError,
)
from .harmonize import (
    EmpiricalCDF,
    HarmonizationMapping,
    build_cdf,
    ks_statistic,
    match_histogram,
    zscore_normalize,
)
from .metrics import (
    HD95_SENTINEL,
    REGIONS,
    CaseMetrics,
    RegionMetrics,
    connected_components,
    dice,
    evaluate,
    evaluate_case,
    hd95,
    keep_largest_per_class,
    sensitivity_specificity,
    summarize,
    write_metrics_csv,
)
from .model import GliomaForgeNet, ModelConfig
from .nifti import (
    MODALITIES,
    VALID_LABELS,
    MultiModalCase,
    SegmentationMask,
    Volume,
    VolumeHeader,
    load_case,
    load_mask,
    load_volume,
    save_case,
    save_mask,
    save_volume,
)
from .radiomics import (
    FEATURE_NAMES,
    FeatureVector,
    extract_case_features,
    first_order_features,
    read_features_csv,
    write_features_csv,
)
from .stratify import (
    FoldAssignment,
    PCAModel,
    kmeans,
    pca_fit_transform,
    read_folds_csv,
    standardize,
    stratified_folds,
    stratify_cases,
    within_cluster_ss,
    write_folds_csv,
)
from .synthetic import make_case, make_dataset
from .train import (
    AdamW,
    FitResult,
    TrainConfig,
    TrainingCase,
    apply_augmentation,
    composite_loss,
    cosine_lr,
    cross_entropy,
    dice_loss,
    fit,
    mean_foreground_dice,
    predict_labels,
    random_crop,
    sample_augmentation,
    training_case,
)

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AlignmentError",
    "CaseMetrics",
    "CheckpointError",
    "ConfigError",
    "DegenerateInputError",
    "EmpiricalCDF",
    "EmptyForegroundError",
    "FEATURE_NAMES",
    "FeatureVector",
    "FitResult",
    "FoldAssignment",
    "GliomaForgeError",
    "GliomaForgeNet",
    "HD95_SENTINEL",
    "HarmonizationMapping",
    "HeaderError",
    "InsufficientDataError",
    "LabelError",
    "MODALITIES",
    "ModelConfig",
    "MultiModalCase",
    "PCAModel",
    "PairingError",
    "REGIONS",
    "RegionMetrics",
    "SegmentationMask",
    "ShapeError",
    "TrainConfig",
    "TrainingCase",
    "TrainingDivergedError",
    "TruncatedDataError",
    "UnsupportedDataTypeError",
    "VALID_LABELS",
    "Volume",
    "VolumeHeader",
    "apply_augmentation",
    "build_cdf",
    "composite_loss",
    "connected_components",
    "cosine_lr",
    "cross_entropy",
    "dice",
    "dice_loss",
    "evaluate",
    "evaluate_case",
    "extract_case_features",
    "first_order_features",
    "fit",
    "hd95",
    "keep_largest_per_class",
    "kmeans",
    "ks_statistic",
    "load_case",
    "load_mask",
    "load_volume",
    "make_case",
    "make_dataset",
    "match_histogram",
    "mean_foreground_dice",
    "pca_fit_transform",
    "predict_labels",
    "random_crop",
    "read_features_csv",
    "read_folds_csv",
    "sample_augmentation",
    "save_case",
    "save_mask",
    "save_volume",
    "sensitivity_specificity",
    "standardize",
    "stratified_folds",
    "stratify_cases",
    "summarize",
    "training_case",
    "within_cluster_ss",
    "write_features_csv",
    "write_folds_csv",
    "write_metrics_csv",
    "zscore_normalize",
]
