"""
Restoration network: frozen embedders, composite context prompt, residual prior,
prompt blocks and the U-shaped cyclic backbone.
"""

from .backbone import CyclicOutput, CyclicPromptNet, EncoderFeatures
from .embedder import Caption, Captioner, Embedding, build_embedder, generate_caption
from .prompt_block import IterationContext, PromptBlock, cross_attend
from .prompt_engine import PromptEngine, PromptTokens
from .residual_prior import compute_affine, extract_residual, modulate

__all__ = [
    "CyclicOutput",
    "CyclicPromptNet",
    "EncoderFeatures",
    "Caption",
    "Captioner",
    "Embedding",
    "build_embedder",
    "generate_caption",
    "IterationContext",
    "PromptBlock",
    "cross_attend",
    "PromptEngine",
    "PromptTokens",
    "compute_affine",
    "extract_residual",
    "modulate",
]
