"""
Frozen semantic embedders for images and captions, plus caption generation.

The toy backend is a deterministic stand-in for pretrained vision-language
encoders: images are area-pooled to 8×8×3 and projected, captions are hashed
into a bag of words and projected. Both projections are drawn once from a
seeded generator and never trained. An external backend exchanges files with
an out-of-process encoder for real pretrained weights.
"""

import hashlib
import os
import tempfile
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import (
    BackendUnavailableError,
    DimensionMismatchError,
    EmptyCaptionError,
    MissingMetadataError,
)
from utils.external_backend import ExternalBackend
from utils.image_io import to_numpy, write_image
from utils.logger import logger

MAX_CAPTION_LENGTH = 256
CAPTION_TEMPLATE = "a photo of {scene} in {weather}"
POOL_SIZE = 8
TEXT_BINS = 512
NORM_EPS = 1e-12


@dataclass(frozen=True)
class Caption:
    text: str
    source: str = "metadata-template"  # or "external-captioner"

    def __post_init__(self):
        text = (self.text or "").strip()
        if not text:
            raise EmptyCaptionError("Caption text is empty")
        object.__setattr__(self, "text", text[:MAX_CAPTION_LENGTH])


@dataclass
class Embedding:
    """A batch of embeddings, ``values`` is B×D_e."""
    values: torch.Tensor
    backend_id: str

    def __post_init__(self):
        if self.values.dim() == 1:
            self.values = self.values.unsqueeze(0)
        if self.values.dim() != 2:
            raise DimensionMismatchError(f"Embedding must be B×D_e, got {tuple(self.values.shape)}")

    @property
    def dim(self) -> int:
        return self.values.shape[-1]


def l2_normalize(v: torch.Tensor) -> torch.Tensor:
    """Row-wise L2 normalization; rows with norm < 1e-12 map to exact zeros."""
    norm = v.norm(dim=-1, keepdim=True)
    degenerate = norm < NORM_EPS
    safe = torch.where(degenerate, torch.ones_like(norm), norm)
    return torch.where(degenerate, torch.zeros_like(v), v / safe)


def hash_token(token: str) -> int:
    """Stable bin index of a token (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % TEXT_BINS


def bag_of_words(text: str) -> np.ndarray:
    counts = np.zeros(TEXT_BINS, dtype=np.float64)
    for token in text.lower().split():
        counts[hash_token(token)] += 1.0
    return counts


def _as_caption(caption: Union[Caption, str]) -> Caption:
    return caption if isinstance(caption, Caption) else Caption(caption)


def _as_image_batch(images: torch.Tensor) -> torch.Tensor:
    if images.dim() == 3:
        images = images.unsqueeze(0)
    if images.dim() != 4 or images.shape[1] != 3:
        raise DimensionMismatchError(f"Expected a 3-channel image batch, got {tuple(images.shape)}")
    if images.shape[-2] < POOL_SIZE or images.shape[-1] < POOL_SIZE:
        raise DimensionMismatchError(f"Images must be at least {POOL_SIZE}×{POOL_SIZE}")
    return images


class ImageTextEmbedder(nn.Module):
    """Embedder interface. Implementations hold no trainable parameters."""

    backend_id: str = "base"

    def __init__(self, dim: int = 512):
        super().__init__()
        self.dim = dim

    def embed_image(self, images: torch.Tensor) -> Embedding:
        raise NotImplementedError

    def embed_text(self, captions: Sequence[Union[Caption, str]]) -> Embedding:
        raise NotImplementedError


class ToyEmbedder(ImageTextEmbedder):
    backend_id = "toy"

    def __init__(self, dim: int = 512, seed: int = 0):
        super().__init__(dim)
        self.seed = seed
        g = torch.Generator().manual_seed(seed)
        in_img = POOL_SIZE * POOL_SIZE * 3
        image_projection = torch.randn(in_img, dim, generator=g, dtype=torch.float64) / in_img ** 0.5
        text_projection = torch.randn(TEXT_BINS, dim, generator=g, dtype=torch.float64) / TEXT_BINS ** 0.5
        # regenerated from the seed, so kept out of checkpoints
        self.register_buffer("image_projection", image_projection, persistent=False)
        self.register_buffer("text_projection", text_projection, persistent=False)

    def embed_image(self, images: torch.Tensor) -> Embedding:
        x = _as_image_batch(images)
        pooled = F.adaptive_avg_pool2d(x, (POOL_SIZE, POOL_SIZE))
        # flattened in row-major H, W, C order
        flat = pooled.permute(0, 2, 3, 1).reshape(x.shape[0], -1)
        proj = self.image_projection.to(dtype=flat.dtype)
        return Embedding(l2_normalize(flat @ proj), self.backend_id)

    def embed_text(self, captions: Sequence[Union[Caption, str]]) -> Embedding:
        if isinstance(captions, (str, Caption)):
            captions = [captions]
        counts = np.stack([bag_of_words(_as_caption(c).text) for c in captions])
        proj = self.text_projection
        bow = torch.from_numpy(counts).to(device=proj.device, dtype=proj.dtype)
        values = l2_normalize(bow @ proj).float()
        return Embedding(values, self.backend_id)


class ExternalEmbedder(ImageTextEmbedder):
    """Delegates to an out-of-process encoder; not differentiable."""

    backend_id = "external"

    def __init__(self, command: str, dim: int = 512, timeout: float = 60.0):
        super().__init__(dim)
        self.backend = ExternalBackend(command, dim=dim, timeout=timeout)
        if not self.backend.available:
            logger.warning("External embedder selected but its command is not reachable; "
                           "embedding calls will fail")

    @torch.no_grad()
    def embed_image(self, images: torch.Tensor) -> Embedding:
        x = _as_image_batch(images)
        if not self.backend.available:
            raise BackendUnavailableError(f"External embedder not reachable: {self.backend.command!r}")
        vectors = []
        with tempfile.TemporaryDirectory(prefix="cyclicprompt_") as tmp:
            for i in range(x.shape[0]):
                path = os.path.join(tmp, f"image_{i}.png")
                write_image(path, to_numpy(x[i]))
                vectors.append(self.backend.embed_image_file(path))
        values = torch.from_numpy(np.stack(vectors)).to(device=x.device, dtype=x.dtype)
        return Embedding(l2_normalize(values), self.backend_id)

    @torch.no_grad()
    def embed_text(self, captions: Sequence[Union[Caption, str]]) -> Embedding:
        if isinstance(captions, (str, Caption)):
            captions = [captions]
        vectors = [self.backend.embed_text(_as_caption(c).text) for c in captions]
        values = torch.from_numpy(np.stack(vectors))
        return Embedding(l2_normalize(values), self.backend_id)


def build_embedder(cfg, seed_offset: int = 0) -> ImageTextEmbedder:
    """Create the embedder selected by ``embedder.backend``."""
    if cfg.backend == "toy":
        return ToyEmbedder(dim=cfg.dim, seed=cfg.seed + seed_offset)
    if cfg.backend == "external":
        return ExternalEmbedder(cfg.external_command, dim=cfg.dim, timeout=cfg.timeout)
    raise BackendUnavailableError(f"Unknown embedder backend: {cfg.backend}")


class Captioner:
    """
    Caption generation: metadata template at desk scale, or an external
    image captioner that may return free-form text.
    """

    def __init__(self, mode: str = "metadata", command: str = "", timeout: float = 60.0):
        self.mode = mode
        self.external = ExternalBackend(command, timeout=timeout) if command else None

    @classmethod
    def from_config(cls, cfg) -> "Captioner":
        return cls(cfg.captioner, cfg.captioner_command, cfg.timeout)

    @staticmethod
    def _metadata_of(sample: Any) -> Mapping[str, str]:
        if isinstance(sample, Mapping):
            return sample
        return getattr(sample, "metadata", None) or {}

    def _external_caption(self, sample: Any) -> Caption:
        lq = getattr(sample, "lq", None)
        if lq is None:
            raise MissingMetadataError("External captioner needs the sample image")
        with tempfile.TemporaryDirectory(prefix="cyclicprompt_") as tmp:
            path = os.path.join(tmp, "sample.png")
            write_image(path, np.asarray(lq))
            return Caption(self.external.caption_image_file(path), source="external-captioner")

    def generate_caption(self, sample: Any) -> Caption:
        metadata = self._metadata_of(sample)
        has_metadata = bool(metadata.get("scene")) and bool(metadata.get("weather"))
        external_ok = self.external is not None and self.external.available

        if self.mode == "external" and external_ok:
            return self._external_caption(sample)
        if has_metadata:
            return Caption(CAPTION_TEMPLATE.format(scene=metadata["scene"], weather=metadata["weather"]))
        if external_ok:
            return self._external_caption(sample)
        raise MissingMetadataError("Sample carries no scene/weather metadata and no external captioner is available")


def generate_caption(sample: Any, captioner: Optional[Captioner] = None) -> Caption:
    return (captioner or Captioner()).generate_caption(sample)
