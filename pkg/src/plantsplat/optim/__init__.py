"""Losses, analytic gradients and the training loop."""

from .adam import Adam
from .backward import BackwardResult, GradientBuffer, backward
from .config import MODES, TrainConfig
from .density import RefinementReport, densify_and_prune, reset_opacity
from .losses import loss_masked, loss_unmasked, photometric_loss, ssim, ssim_map
from .trainer import FitResult, Trainer, fit, init_scene_from_points

__all__ = [
    "Adam", "BackwardResult", "FitResult", "GradientBuffer", "MODES", "RefinementReport",
    "TrainConfig", "Trainer", "backward", "densify_and_prune", "fit", "init_scene_from_points",
    "loss_masked", "loss_unmasked", "photometric_loss", "reset_opacity", "ssim", "ssim_map",
]
