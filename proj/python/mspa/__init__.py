"""Mutual- and self-prototype alignment for semi-supervised binary segmentation."""

from ._mspa import (
    CheckpointError,
    ConfigError,
    DataError,
    Model,
    NonFiniteLossError,
    confusion,
    cosine_similarity_map,
    default_config,
    evaluate,
    extract_prototypes,
    fuse_votes,
    generate_synthetic,
    majority_threshold,
    metrics,
    ramp_weight,
    train,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Model",
    "NonFiniteLossError",
    "confusion",
    "cosine_similarity_map",
    "default_config",
    "evaluate",
    "extract_prototypes",
    "fuse_votes",
    "generate_synthetic",
    "majority_threshold",
    "metrics",
    "ramp_weight",
    "train",
]
