"""
Residue-channel prior and the residual prior modulator (RPM).

The residue channel is max(R,G,B) - min(R,G,B) of the first-pass restoration.
Each prompt block owns one RPM that turns the residue map into per-feature
affine parameters (alpha, beta) at its decoder level.
"""

from typing import Mapping, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import ChannelCountError, ShapeMismatchError, UnknownLevelError


def extract_residual(img: torch.Tensor) -> torch.Tensor:
    """B×3×H×W (or 3×H×W) image -> B×1×H×W residue map."""
    if img.dim() == 3:
        img = img.unsqueeze(0)
    if img.dim() != 4 or img.shape[1] != 3:
        raise ChannelCountError(f"Residual prior needs an RGB image, got shape {tuple(img.shape)}")
    return img.amax(dim=1, keepdim=True) - img.amin(dim=1, keepdim=True)


def modulate(x: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    if x.shape != alpha.shape or x.shape != beta.shape:
        raise ShapeMismatchError(
            f"modulate expects equal shapes, got x={tuple(x.shape)} alpha={tuple(alpha.shape)} "
            f"beta={tuple(beta.shape)}")
    return alpha * x + beta


class LargeKernelChannelBlock(nn.Module):
    """
    Large-kernel attention followed by squeeze-excite channel attention,
    with a residual skip around the block. Shape-preserving.
    """

    def __init__(self, channels: int, kernel: int = 7, se_ratio: int = 4):
        super().__init__()
        hidden = max(1, channels // se_ratio)
        self.lka = nn.Conv2d(channels, channels, kernel, padding=kernel // 2, groups=channels)
        self.se_pool = nn.AdaptiveAvgPool2d(1)
        self.se_reduce = nn.Conv2d(channels, hidden, 1)
        self.se_act = nn.GELU()
        self.se_expand = nn.Conv2d(hidden, channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x * torch.sigmoid(self.lka(x))
        scale = torch.sigmoid(self.se_expand(self.se_act(self.se_reduce(self.se_pool(y)))))
        return x + self.proj(y * scale)


class ResidualPriorModulator(nn.Module):
    """
    residue map -> 3x3 conv (1->C) -> 3x3 conv -> 2 × LargeKernelChannelBlock
               -> per head: 3x3 conv -> 1x1 conv  => (alpha, beta)

    The alpha head starts near identity modulation (bias 1, tiny weights).
    """

    def __init__(self, channels: int, kernel: int = 7, se_ratio: int = 4):
        super().__init__()
        self.channels = channels
        self.stem = nn.Sequential(
            nn.Conv2d(1, channels, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GELU(),
        )
        self.mining = nn.Sequential(
            LargeKernelChannelBlock(channels, kernel, se_ratio),
            LargeKernelChannelBlock(channels, kernel, se_ratio),
        )
        self.alpha_conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.beta_conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.GELU()
        self.to_alpha = nn.Conv2d(channels, channels, 1)
        self.to_beta = nn.Conv2d(channels, channels, 1)

        nn.init.normal_(self.to_alpha.weight, std=1e-3)
        nn.init.ones_(self.to_alpha.bias)
        nn.init.normal_(self.to_beta.weight, std=1e-3)
        nn.init.zeros_(self.to_beta.bias)

    def forward(self, r: torch.Tensor, size: Tuple[int, int]) -> Tuple[torch.Tensor, torch.Tensor]:
        # area averaging down to the level's resolution
        r = F.adaptive_avg_pool2d(r, tuple(size))
        f = self.mining(self.stem(r))
        alpha = self.to_alpha(self.act(self.alpha_conv(f)))
        beta = self.to_beta(self.act(self.beta_conv(f)))
        return alpha, beta


def level_size(height: int, width: int, level: int) -> Tuple[int, int]:
    """Spatial size of decoder level ``level`` (1 = full resolution)."""
    scale = 2 ** (level - 1)
    return height // scale, width // scale


def compute_affine(r: torch.Tensor, level: int,
                   params: Mapping[int, ResidualPriorModulator]) -> Tuple[torch.Tensor, torch.Tensor]:
    """(alpha, beta) of the RPM attached to ``level`` for a full-resolution residue map."""
    if level not in params:
        raise UnknownLevelError(f"No residual prior modulator at decoder level {level}")
    return params[level](r, level_size(r.shape[-2], r.shape[-1], level))
