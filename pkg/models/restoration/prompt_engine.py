"""
Composite context prompt (C2P) construction.

Initial prompt: N visual rows (weather knowledge + input-conditional vectors)
followed by one textual row. Cyclic prompt (erase-and-paste): the visual rows
are erased and one weather-free row, projected from the first-pass
restoration, is pasted in front of the same textual row.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn

from models.restoration.embedder import Embedding
from utils.errors import NonFiniteInputError, WidthMismatchError

VISUAL = "visual"
TEXTUAL = "textual"
WEATHER_FREE = "weather-free"
INITIAL = "initial"
CYCLIC = "cyclic"


@dataclass
class PromptTokens:
    """Prompt token matrix ``tokens`` (B×M×D) with one role per row."""
    tokens: torch.Tensor
    roles: Tuple[str, ...]
    iteration: str

    def __post_init__(self):
        if self.tokens.dim() == 2:
            self.tokens = self.tokens.unsqueeze(0)
        self.roles = tuple(self.roles)
        if self.tokens.dim() != 3 or self.tokens.shape[1] != len(self.roles) or not self.roles:
            raise WidthMismatchError(
                f"PromptTokens expects B×M×D with M={len(self.roles)} roles, got {tuple(self.tokens.shape)}")
        head_role = VISUAL if self.iteration == INITIAL else WEATHER_FREE
        n_head = sum(r == head_role for r in self.roles)
        expected = (head_role,) * n_head + (TEXTUAL,) * (len(self.roles) - n_head)
        if self.iteration not in (INITIAL, CYCLIC) or self.roles != expected or self.roles.count(TEXTUAL) > 1:
            raise ValueError(f"Invalid role layout {self.roles} for {self.iteration} prompt")
        if self.iteration == CYCLIC and n_head > 1:
            raise ValueError("Cyclic prompt holds at most one weather-free row")
        if not torch.isfinite(self.tokens).all():
            raise NonFiniteInputError("Prompt tokens contain non-finite values")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[1]

    @property
    def width(self) -> int:
        return self.tokens.shape[2]

    def rows(self, role: str) -> torch.Tensor:
        idx = [i for i, r in enumerate(self.roles) if r == role]
        return self.tokens[:, idx]


class PromptMLP(nn.Module):
    """Two affine layers with a GELU in between, D_e -> D -> D."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(out_dim, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise WidthMismatchError(f"Expected width {self.in_dim}, got {x.shape[-1]}")
        return self.fc2(self.act(self.fc1(x)))


def _embedding_values(e, ref: torch.Tensor) -> torch.Tensor:
    values = e.values if isinstance(e, Embedding) else e
    if values.dim() == 1:
        values = values.unsqueeze(0)
    return values.to(device=ref.device, dtype=ref.dtype)


def build_visual_prompt(p_k: torch.Tensor, p_i: torch.Tensor) -> torch.Tensor:
    """Replicate the knowledge token N times and add the input-conditional vectors.

    p_k: B×D (or B×1×D), p_i: N×D -> B×N×D
    """
    if p_k.dim() == 2:
        p_k = p_k.unsqueeze(1)
    if p_k.shape[-1] != p_i.shape[-1]:
        raise WidthMismatchError(f"Knowledge width {p_k.shape[-1]} != vector width {p_i.shape[-1]}")
    return p_k.expand(-1, p_i.shape[0], -1) + p_i.unsqueeze(0)


def build_initial_c2p(p_v: Optional[torch.Tensor], p_t: Optional[torch.Tensor]) -> PromptTokens:
    """Concat(visual rows, textual row). Either part may be None under ablation."""
    parts, roles = [], []
    if p_v is not None:
        if p_v.dim() == 2:
            p_v = p_v.unsqueeze(0)
        parts.append(p_v)
        roles += [VISUAL] * p_v.shape[1]
    if p_t is not None:
        p_t = p_t.reshape(p_t.shape[0], 1, -1)
        parts.append(p_t)
        roles.append(TEXTUAL)
    _check_widths(parts)
    return PromptTokens(_concat(parts), tuple(roles), INITIAL)


def build_cyclic_c2p(p_w: torch.Tensor, p_t: Optional[torch.Tensor]) -> PromptTokens:
    """Concat(weather-free row, textual row); ``p_t`` is reused from the initial prompt."""
    parts = [p_w.reshape(p_w.shape[0], 1, -1)]
    roles = [WEATHER_FREE]
    if p_t is not None:
        parts.append(p_t.reshape(p_t.shape[0], 1, -1))
        roles.append(TEXTUAL)
    _check_widths(parts)
    return PromptTokens(_concat(parts), tuple(roles), CYCLIC)


def _check_widths(parts) -> None:
    if not parts:
        raise ValueError("A prompt needs at least one token")
    widths = {p.shape[-1] for p in parts}
    if len(widths) != 1:
        raise WidthMismatchError(f"Prompt parts have different widths: {sorted(widths)}")


def _concat(parts) -> torch.Tensor:
    batch = max(p.shape[0] for p in parts)
    return torch.cat([p.expand(batch, -1, -1) for p in parts], dim=1)


class PromptEngine(nn.Module):
    """
    Learnable half of the composite context prompt.

    Args:
        embed_dim: D_e, width of the frozen embeddings
        prompt_dim: D, width of prompt tokens
        num_vectors: N, number of input-conditional vectors
        init_std: std of the Gaussian init of the input-conditional vectors
        use_knowledge / use_input_vectors / use_text: ablation switches
    """

    def __init__(self, embed_dim: int = 512, prompt_dim: int = 64, num_vectors: int = 8,
                 init_std: float = 0.02, use_knowledge: bool = True,
                 use_input_vectors: bool = True, use_text: bool = True):
        super().__init__()
        if num_vectors < 1:
            raise ValueError("num_vectors must be >= 1")
        self.embed_dim = embed_dim
        self.prompt_dim = prompt_dim
        self.num_vectors = num_vectors
        self.use_knowledge = use_knowledge
        self.use_input_vectors = use_input_vectors
        self.use_text = use_text

        self.mlp_knowledge = PromptMLP(embed_dim, prompt_dim)
        self.mlp_weather_free = PromptMLP(embed_dim, prompt_dim)
        self.text_proj = nn.Linear(embed_dim, prompt_dim, bias=False)
        self.input_vectors = nn.Parameter(torch.randn(num_vectors, prompt_dim) * init_std)

    @property
    def has_visual(self) -> bool:
        return self.use_knowledge or self.use_input_vectors

    def project_knowledge(self, e) -> torch.Tensor:
        return self.mlp_knowledge(_embedding_values(e, self.mlp_knowledge.fc1.weight))

    def project_weather_free(self, e) -> torch.Tensor:
        return self.mlp_weather_free(_embedding_values(e, self.mlp_weather_free.fc1.weight))

    def project_text(self, e) -> torch.Tensor:
        values = _embedding_values(e, self.text_proj.weight)
        if values.shape[-1] != self.embed_dim:
            raise WidthMismatchError(f"Expected width {self.embed_dim}, got {values.shape[-1]}")
        return self.text_proj(values)

    def initial(self, image_embedding, text_embedding) -> Tuple[PromptTokens, Optional[torch.Tensor]]:
        """Build the initial C2P; returns it together with the textual token for reuse."""
        p_t = self.project_text(text_embedding) if self.use_text else None
        p_v = None
        if self.has_visual:
            ref = self.input_vectors
            if self.use_knowledge:
                p_k = self.project_knowledge(image_embedding)
            else:
                batch = image_embedding.values.shape[0] if isinstance(image_embedding, Embedding) else 1
                p_k = ref.new_zeros(batch, self.prompt_dim)
            p_i = ref if self.use_input_vectors else torch.zeros_like(ref)
            p_v = build_visual_prompt(p_k, p_i)
        return build_initial_c2p(p_v, p_t), p_t

    def cyclic(self, restored_embedding, p_t: Optional[torch.Tensor]) -> PromptTokens:
        """Erase-and-paste: weather-free row replaces the visual rows, textual row kept."""
        return build_cyclic_c2p(self.project_weather_free(restored_embedding), p_t)
