# SPDX-License-Identifier: Apache-2.0
"""Variational instance-adaptive prompt tuning on a frozen mini-ViT."""

from ._v2apt import (
    Checkpoint,
    ConfigError,
    ContractError,
    Dataset,
    Error,
    FormatError,
    IoError,
    NumericError,
    RunConfig,
    ShapeError,
    evaluate,
    generate,
    gradcheck,
    kl_divergence,
    latent_stats,
    presets,
    pretrain,
    similarity_maps,
    split,
    tune,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "ContractError",
    "Dataset",
    "Error",
    "FormatError",
    "IoError",
    "NumericError",
    "RunConfig",
    "ShapeError",
    "evaluate",
    "generate",
    "gradcheck",
    "kl_divergence",
    "latent_stats",
    "presets",
    "pretrain",
    "similarity_maps",
    "split",
    "tune",
]
