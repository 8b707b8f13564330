"""Optimizer settings sized for a voxel grid on a desktop CPU."""

from __future__ import annotations

import dataclasses

from .losses import LossConfig

DESK_RESOLUTION = 48


def desk_config(**overrides) -> LossConfig:
    """Settings used by the synthetic benchmark and the CLI by default.

    Compared to ``LossConfig()`` (MLP-scale settings): a larger step size,
    fewer rays and epochs, and blurred updates (see ``LossConfig.smoothing``).
    """
    cfg = LossConfig(
        learning_rate=3e-3,
        rays_per_iteration=8192,
        epochs=500,
        warmup_epochs=100,
        sharpness_interval=100,
        smoothing=2.0,
    )
    return dataclasses.replace(cfg, **overrides)
