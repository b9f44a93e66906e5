"""
4-level U-shaped transformer with prompt blocks in the decoder, executing the
two-iteration "Prompt-Restore-Prompt" forward pass.

Encoder features are computed once; the (shared) decoder runs twice, first
guided by the initial C2P, then by the cyclic C2P plus the residual prior of
the first restoration.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from models.restoration.embedder import Caption, build_embedder
from models.restoration.prompt_block import IterationContext, PromptBlock
from models.restoration.prompt_engine import PromptEngine, PromptTokens
from models.restoration.residual_prior import compute_affine, extract_residual
from utils.errors import (
    ContextMismatchError,
    DivisibilityError,
    MissingMetadataError,
    NonFiniteActivationError,
)

STRIDE = 8


##########################################################################
## Transformer block

class LayerNorm2d(nn.Module):
    """LayerNorm over the channel dimension of a B×C×H×W tensor."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        x = rearrange(x, "b c h w -> b (h w) c")
        mu = x.mean(-1, keepdim=True)
        sigma = x.var(-1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(sigma + self.eps) * self.weight + self.bias
        return rearrange(x, "b (h w) c -> b c h w", h=h, w=w)


class ChannelAttention(nn.Module):
    """Transposed self-attention: the attention map is C×C per head."""

    def __init__(self, dim: int, num_heads: int, bias: bool = False):
        super().__init__()
        self.num_heads = num_heads
        self.temperature = nn.Parameter(torch.ones(num_heads, 1, 1))
        self.qkv = nn.Conv2d(dim, dim * 3, kernel_size=1, bias=bias)
        self.qkv_dwconv = nn.Conv2d(dim * 3, dim * 3, kernel_size=3, padding=1, groups=dim * 3, bias=bias)
        self.project_out = nn.Conv2d(dim, dim, kernel_size=1, bias=bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        q, k, v = self.qkv_dwconv(self.qkv(x)).chunk(3, dim=1)

        q = rearrange(q, "b (head c) h w -> b head c (h w)", head=self.num_heads)
        k = rearrange(k, "b (head c) h w -> b head c (h w)", head=self.num_heads)
        v = rearrange(v, "b (head c) h w -> b head c (h w)", head=self.num_heads)

        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)

        attn = ((q @ k.transpose(-2, -1)) * self.temperature).softmax(dim=-1)
        out = rearrange(attn @ v, "b head c (h w) -> b (head c) h w", head=self.num_heads, h=h, w=w)
        return self.project_out(out)


class GatedFeedForward(nn.Module):
    def __init__(self, dim: int, expansion: float = 2.66, bias: bool = False):
        super().__init__()
        hidden = int(dim * expansion)
        self.project_in = nn.Conv2d(dim, hidden * 2, kernel_size=1, bias=bias)
        self.dwconv = nn.Conv2d(hidden * 2, hidden * 2, kernel_size=3, padding=1, groups=hidden * 2, bias=bias)
        self.project_out = nn.Conv2d(hidden, dim, kernel_size=1, bias=bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1, x2 = self.dwconv(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(x1) * x2)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, expansion: float = 2.66,
                 bias: bool = False, check_finite: bool = False):
        super().__init__()
        self.norm1 = LayerNorm2d(dim)
        self.attn = ChannelAttention(dim, num_heads, bias)
        self.norm2 = LayerNorm2d(dim)
        self.ffn = GatedFeedForward(dim, expansion, bias)
        self.check_finite = check_finite

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.ffn(self.norm2(x))
        if self.check_finite and not torch.isfinite(x).all():
            raise NonFiniteActivationError(f"Non-finite activation in transformer block (shape {tuple(x.shape)})")
        return x


def _stage(dim: int, heads: int, blocks: int, expansion: float, check_finite: bool) -> nn.Sequential:
    return nn.Sequential(*[TransformerBlock(dim, heads, expansion, check_finite=check_finite)
                           for _ in range(blocks)])


class Downsample(nn.Module):
    """Strided 3x3 convolution: H,W halve, channels double."""

    def __init__(self, n_feat: int):
        super().__init__()
        self.body = nn.Conv2d(n_feat, n_feat * 2, kernel_size=3, stride=2, padding=1, bias=False)

    def forward(self, x):
        return self.body(x)


class Upsample(nn.Module):
    """3x3 convolution then pixel shuffle: H,W double, channels halve."""

    def __init__(self, n_feat: int):
        super().__init__()
        self.body = nn.Sequential(nn.Conv2d(n_feat, n_feat * 2, kernel_size=3, padding=1, bias=False),
                                  nn.PixelShuffle(2))

    def forward(self, x):
        return self.body(x)


##########################################################################
## Cyclic network

@dataclass
class EncoderFeatures:
    latent: torch.Tensor
    skips: List[torch.Tensor]  # levels 1..3
    image: torch.Tensor


@dataclass
class CyclicOutput:
    first: torch.Tensor   # Ĩ, first-pass restoration
    final: torch.Tensor   # Î, final restoration
    initial_prompt: Optional[PromptTokens] = None
    cyclic_prompt: Optional[PromptTokens] = None
    residual: Optional[torch.Tensor] = None


Captions = Union[None, str, Caption, Sequence[Union[str, Caption]]]


class CyclicPromptNet(nn.Module):
    """
    Args:
        config: ConfigManager (uses the embedder, prompt, rpm, attn, model and ablation sections)
    """

    def __init__(self, config):
        super().__init__()
        m, p, a = config.model, config.prompt, config.ablation
        c = list(m.channels)
        self.channels = c
        self.prompt_levels = sorted(m.prompt_block_levels, reverse=True)
        self.use_prompt = a.use_prompt
        self.use_text = a.use_text
        self.use_epm = a.use_epm
        self.detach_first_pass = m.detach_first_pass

        self.patch_embed = nn.Conv2d(3, c[0], kernel_size=3, padding=1, bias=False)
        self.encoder_levels = nn.ModuleList([
            _stage(c[i], m.heads[i], m.encoder_blocks[i], m.ffn_expansion, m.check_finite) for i in range(4)
        ])
        self.downs = nn.ModuleList([Downsample(c[i]) for i in range(3)])

        # decoder: level l -> l-1 for l = 4, 3, 2
        self.ups = nn.ModuleDict({str(l): Upsample(c[l - 1]) for l in (4, 3, 2)})
        self.fuse = nn.ModuleDict({str(l): nn.Conv2d(2 * c[l - 1], c[l - 1], kernel_size=1, bias=False)
                                   for l in (3, 2, 1)})
        self.decoder_levels = nn.ModuleDict({
            str(l): _stage(c[l - 1], m.heads[l - 1], m.decoder_blocks[l - 1], m.ffn_expansion, m.check_finite)
            for l in (3, 2, 1)
        })
        self.refinement = _stage(c[0], m.heads[0], m.decoder_blocks[3], m.ffn_expansion, m.check_finite)
        self.output = nn.Conv2d(c[0], 3, kernel_size=3, padding=1, bias=False)

        self.embedder = build_embedder(config.embedder)
        self.restored_embedder = (self.embedder if config.embedder.share_image_encoder
                                  else build_embedder(config.embedder, seed_offset=1))
        if self.use_prompt:
            self.prompt_engine = PromptEngine(
                embed_dim=config.embedder.dim, prompt_dim=p.D, num_vectors=p.N, init_std=p.init_std,
                use_knowledge=a.use_knowledge, use_input_vectors=a.use_input_vectors, use_text=a.use_text)
            self.prompt_blocks = nn.ModuleDict({
                str(l): PromptBlock(l, c[l - 1], p.D, config.attn.scale_mode,
                                    config.rpm.kernel, config.rpm.se_ratio,
                                    use_rpm=a.use_epm and a.use_rpm)
                for l in self.prompt_levels
            })
        else:
            self.prompt_engine = None
            self.prompt_blocks = nn.ModuleDict()

    # ------------------------------------------------------------------ encoder
    def encode(self, img: torch.Tensor) -> EncoderFeatures:
        if img.shape[-2] % STRIDE or img.shape[-1] % STRIDE:
            raise DivisibilityError(
                f"Input size {tuple(img.shape[-2:])} is not divisible by {STRIDE}; use restore() to pad")
        x = self.patch_embed(img)
        skips = []
        for i, stage in enumerate(self.encoder_levels):
            x = stage(x)
            if i < 3:
                skips.append(x)
                x = self.downs[i](x)
        return EncoderFeatures(latent=x, skips=skips, image=img)

    # ------------------------------------------------------------------ decoder
    def decode(self, features: EncoderFeatures, ctx: Optional[IterationContext]) -> torch.Tensor:
        if self.use_prompt and ctx is None:
            raise ContextMismatchError("Prompted decoder needs an iteration context")
        x = features.latent
        for level in (4, 3, 2):
            if str(level) in self.prompt_blocks:
                x = self.prompt_blocks[str(level)](x, ctx)
            x = self.ups[str(level)](x)
            x = torch.cat([x, features.skips[level - 2]], dim=1)
            x = self.fuse[str(level - 1)](x)
            x = self.decoder_levels[str(level - 1)](x)
        x = self.refinement(x)
        return (self.output(x) + features.image).clamp(0.0, 1.0)

    # ------------------------------------------------------------------ prompts
    def _text_embedding(self, captions: Captions, batch: int):
        if not self.use_text:
            return None
        if captions is None:
            raise MissingMetadataError("Captions are required when the textual prompt is enabled")
        if isinstance(captions, (str, Caption)):
            captions = [captions] * batch
        with torch.no_grad():
            return self.embedder.embed_text(list(captions))

    def rpm_bank(self) -> Dict[int, nn.Module]:
        return {int(k): blk.rpm for k, blk in self.prompt_blocks.items() if blk.rpm is not None}

    def compute_affine(self, residual: torch.Tensor, level: int):
        return compute_affine(residual, level, self.rpm_bank())

    # ------------------------------------------------------------------ forward
    def forward_cyclic(self, img: torch.Tensor, captions: Captions = None) -> CyclicOutput:
        if img.dim() == 3:
            img = img.unsqueeze(0)
        features = self.encode(img)

        ctx1, initial, p_t = None, None, None
        if self.use_prompt:
            text_emb = self._text_embedding(captions, img.shape[0])
            initial, p_t = self.prompt_engine.initial(self.embedder.embed_image(img), text_emb)
            ctx1 = IterationContext(1, initial)
        first = self.decode(features, ctx1)

        prior = first.detach() if self.detach_first_pass else first
        if self.use_prompt and self.use_epm:
            cyclic = self.prompt_engine.cyclic(self.restored_embedder.embed_image(prior), p_t)
            residual = extract_residual(prior)
            final = self.decode(features, IterationContext(2, cyclic, residual))
            return CyclicOutput(first, final, initial, cyclic, residual)

        # without erase-and-paste the second pass reuses the initial prompt and skips the RPM
        final = self.decode(features, ctx1)
        return CyclicOutput(first, final, initial)

    def forward(self, img: torch.Tensor, captions: Captions = None):
        out = self.forward_cyclic(img, captions)
        return out.first, out.final

    @torch.no_grad()
    def restore(self, img: torch.Tensor, captions: Captions = None) -> CyclicOutput:
        """Inference on arbitrary sizes: reflect-pad to a multiple of 8, run, crop back."""
        if img.dim() == 3:
            img = img.unsqueeze(0)
        h, w = img.shape[-2:]
        pad_h, pad_w = (-h) % STRIDE, (-w) % STRIDE
        padded = img
        if pad_h or pad_w:
            mode = "reflect" if pad_h < h and pad_w < w else "replicate"
            padded = F.pad(img, (0, pad_w, 0, pad_h), mode=mode)
        out = self.forward_cyclic(padded, captions)
        out.first = out.first[..., :h, :w]
        out.final = out.final[..., :h, :w]
        if out.residual is not None:
            out.residual = out.residual[..., :h, :w]
        return out

    # ------------------------------------------------------------------ reporting
    def parameter_counts(self) -> Dict[str, int]:
        def count(modules) -> int:
            return sum(p.numel() for mod in modules for p in mod.parameters())

        blocks = list(self.prompt_blocks.values())
        counts = {
            "encoder": count([self.patch_embed, self.encoder_levels, self.downs]),
            "decoder": count([self.ups, self.fuse, self.decoder_levels, self.refinement, self.output]),
            "prompt_engine": count([self.prompt_engine]) if self.prompt_engine is not None else 0,
            "prompt_attention": count([b.attn for b in blocks]),
            "residual_prior_modulators": count([b.rpm for b in blocks if b.rpm is not None]),
        }
        counts["total"] = sum(p.numel() for p in self.parameters())
        return counts
