"""Python bindings for the stsr training, sampling and evaluation core."""

from ._stsr import (
    ConfigError,
    DimensionError,
    FormatError,
    IoError,
    NumericalError,
    Trainer,
    TruncationError,
    ablation_rows,
    canonical_config,
    default_config,
    evaluate_maps,
    fingerprint,
    generate_dataset,
    load_dataset,
    loss_content,
    loss_inter_sphere,
    loss_modal,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "IoError",
    "NumericalError",
    "Trainer",
    "TruncationError",
    "ablation_rows",
    "canonical_config",
    "default_config",
    "evaluate_maps",
    "fingerprint",
    "generate_dataset",
    "load_dataset",
    "loss_content",
    "loss_inter_sphere",
    "loss_modal",
]
