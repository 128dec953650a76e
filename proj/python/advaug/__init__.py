"""Sketch simplification networks trained with adversarial augmentation."""

from ._advaug import (
    CheckpointError,
    ConfigError,
    Error,
    Model,
    fold,
    load_checkpoint,
    midtone_fraction,
    midtone_near_strokes,
    mse,
    read_image,
    run_cli,
    save_checkpoint,
    simplify,
    synthesize_pair,
    threshold_target,
    write_png,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "Error",
    "Model",
    "fold",
    "load_checkpoint",
    "midtone_fraction",
    "midtone_near_strokes",
    "mse",
    "read_image",
    "run_cli",
    "save_checkpoint",
    "simplify",
    "synthesize_pair",
    "threshold_target",
    "write_png",
]
