"""
Prompt block: injects prompt tokens into decoder features by cross-attention.

Iteration 1 attends to the initial C2P. Iteration 2 attends to the cyclic C2P
and then modulates the attended features with the residual prior. A residual
skip adds the incoming features to the branch output in both cases.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import torch
import torch.nn as nn
from einops import rearrange

from models.restoration.prompt_engine import CYCLIC, INITIAL, PromptTokens
from models.restoration.residual_prior import ResidualPriorModulator, modulate
from utils.errors import ContextMismatchError, NonFiniteInputError, WidthMismatchError


@dataclass
class IterationContext:
    iteration: int
    prompts: PromptTokens
    residual: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.iteration == 1:
            if self.prompts.iteration != INITIAL or self.residual is not None:
                raise ContextMismatchError("Iteration 1 needs the initial prompt and no residual map")
        elif self.iteration == 2:
            if self.prompts.iteration != CYCLIC or self.residual is None:
                raise ContextMismatchError("Iteration 2 needs the cyclic prompt and a residual map")
        else:
            raise ContextMismatchError(f"Unknown iteration {self.iteration}")


class PromptCrossAttention(nn.Module):
    """
    Single-head cross-attention: queries are the H'·W' spatial positions of x,
    keys/values are the M prompt tokens.

    scale_mode "paper" divides logits by C, "sqrt" by sqrt(C).
    """

    def __init__(self, channels: int, prompt_dim: int, scale_mode: str = "sqrt"):
        super().__init__()
        if scale_mode not in ("paper", "sqrt"):
            raise ValueError(f"Unknown scale_mode: {scale_mode}")
        self.channels = channels
        self.prompt_dim = prompt_dim
        self.scale = float(channels) if scale_mode == "paper" else math.sqrt(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(prompt_dim, channels, bias=False)
        self.to_v = nn.Linear(prompt_dim, channels, bias=False)

    def forward(self, x: torch.Tensor, prompts: Union[PromptTokens, torch.Tensor],
                return_attn: bool = False):
        tokens = prompts.tokens if isinstance(prompts, PromptTokens) else prompts
        if tokens.dim() == 2:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[-1] != self.prompt_dim:
            raise WidthMismatchError(f"Prompt width {tokens.shape[-1]} != key/value input width {self.prompt_dim}")
        if x.shape[1] != self.channels:
            raise WidthMismatchError(f"Feature channels {x.shape[1]} != query width {self.channels}")
        if not (torch.isfinite(x).all() and torch.isfinite(tokens).all()):
            raise NonFiniteInputError("Cross-attention received non-finite inputs")

        h, w = x.shape[-2:]
        q = self.to_q(rearrange(x, "b c h w -> b (h w) c"))
        k = self.to_k(tokens)
        v = self.to_v(tokens)
        attn = (q @ k.transpose(-2, -1) / self.scale).softmax(dim=-1)
        out = rearrange(attn @ v, "b (h w) c -> b c h w", h=h, w=w)
        if return_attn:
            return out, attn
        return out


def cross_attend(x: torch.Tensor, prompts: PromptTokens, params: PromptCrossAttention) -> torch.Tensor:
    return params(x, prompts)


class PromptBlock(nn.Module):
    def __init__(self, level: int, channels: int, prompt_dim: int, scale_mode: str = "sqrt",
                 kernel: int = 7, se_ratio: int = 4, use_rpm: bool = True):
        super().__init__()
        self.level = level
        self.attn = PromptCrossAttention(channels, prompt_dim, scale_mode)
        self.rpm = ResidualPriorModulator(channels, kernel, se_ratio) if use_rpm else None

    def affine(self, residual: torch.Tensor, size: Tuple[int, int]) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.rpm(residual, size)

    def forward(self, x: torch.Tensor, ctx: IterationContext) -> torch.Tensor:
        if ctx.iteration == 1:
            branch = self.attn(x, ctx.prompts)
        else:
            branch = self.attn(x, ctx.prompts)
            if self.rpm is not None:
                alpha, beta = self.affine(ctx.residual, x.shape[-2:])
                branch = modulate(branch, alpha, beta)
        return x + branch
