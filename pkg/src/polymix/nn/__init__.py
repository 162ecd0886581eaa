"""Minimal CNN core: layers, the two architectures, loss, Adam, checkpoints."""

from .loss import bce_loss
from .model import ARCHITECTURES, INITIAL, PROPOSED, Model, ModelConfig, build_model
from .optim import AdamState, adam_step, scheduled_lr

__all__ = ["ARCHITECTURES", "INITIAL", "PROPOSED", "AdamState", "Model", "ModelConfig",
           "adam_step", "bce_loss", "build_model", "scheduled_lr"]
