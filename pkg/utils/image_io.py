"""8-bit PNG reading/writing and numpy <-> torch image conversion."""

import os
from typing import Union

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from utils.errors import ChannelCountError, UnreadableImageError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp")

PathLike = Union[str, os.PathLike]


def is_image_file(path: PathLike) -> bool:
    return str(path).lower().endswith(IMAGE_EXTENSIONS)


def read_image(path: PathLike) -> np.ndarray:
    """Read an image as an H×W×3 float32 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise UnreadableImageError(f"Cannot read image {path}: {e}") from e
    return dequantize(arr)


def quantize(img: np.ndarray) -> np.ndarray:
    """Round a [0, 1] float image to uint8."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def dequantize(arr: np.ndarray) -> np.ndarray:
    """uint8 -> float32 in [0, 1], the exact inverse grid of ``quantize``."""
    return np.asarray(arr, dtype=np.uint8).astype(np.float32) / 255.0


def write_image(path: PathLike, img: np.ndarray) -> None:
    """Write an H×W×3 float image in [0, 1] as an 8-bit PNG."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ChannelCountError(f"Expected H×W×3 image, got shape {img.shape}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(quantize(img)).save(path, format="PNG")


def write_gray_image(path: PathLike, img: np.ndarray) -> None:
    """Write an H×W map in [0, 1] as a single-channel 8-bit PNG."""
    if img.ndim != 2:
        raise ChannelCountError(f"Expected H×W map, got shape {img.shape}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(quantize(img)).save(path, format="PNG")


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """H×W×3 numpy image -> 3×H×W float32 tensor."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ChannelCountError(f"Expected H×W×3 image, got shape {img.shape}")
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float()


def to_numpy(t: torch.Tensor) -> np.ndarray:
    """3×H×W (or 1×3×H×W) tensor -> H×W×3 float32 numpy image."""
    if t.dim() == 4:
        t = t[0]
    return t.detach().float().cpu().clamp(0, 1).permute(1, 2, 0).numpy()
