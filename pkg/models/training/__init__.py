"""
Training harness: objective, trainer and ablation runner.
"""

from .losses import loss_terms, loss_total
from .trainer import Trainer, TrainResult, cosine_lr, train

__all__ = ["loss_terms", "loss_total", "Trainer", "TrainResult", "cosine_lr", "train"]
