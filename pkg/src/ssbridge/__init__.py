"""Diffusion bridge from images to diverse expert-style segmentation masks."""
from .bridge import (GenerationError, SampleConfig, generate, guided_eps, predict_x0,
                     reverse_step, sample_xt, training_target)
from .kernels import BACKEND
from .loss import LossConfig, LossValue, bridge_loss, soft_dice, ssb_loss
from .schedule import Schedule, bridge_coeffs, make_schedule, step_ladder

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "GenerationError", "LossConfig", "LossValue", "SampleConfig", "Schedule",
    "bridge_coeffs", "bridge_loss", "generate", "guided_eps", "make_schedule", "predict_x0",
    "reverse_step", "sample_xt", "soft_dice", "ssb_loss", "step_ladder", "training_target",
]
