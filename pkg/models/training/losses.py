"""Training objective: L1 on both restorations, equally weighted."""

from typing import Dict

import torch
import torch.nn.functional as F

from utils.errors import ShapeMismatchError


def loss_terms(i_tilde: torch.Tensor, i_hat: torch.Tensor, i_gt: torch.Tensor) -> Dict[str, torch.Tensor]:
    if i_tilde.shape != i_gt.shape or i_hat.shape != i_gt.shape:
        raise ShapeMismatchError(
            f"loss expects equal shapes, got first={tuple(i_tilde.shape)} final={tuple(i_hat.shape)} "
            f"gt={tuple(i_gt.shape)}")
    first = F.l1_loss(i_tilde, i_gt)
    final = F.l1_loss(i_hat, i_gt)
    return {"loss": first + final, "loss_first": first, "loss_final": final}


def loss_total(i_tilde: torch.Tensor, i_hat: torch.Tensor, i_gt: torch.Tensor) -> torch.Tensor:
    """mean|Ĩ − GT| + mean|Î − GT|"""
    return loss_terms(i_tilde, i_hat, i_gt)["loss"]
