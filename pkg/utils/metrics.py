"""
Full-reference image quality metrics.

PSNR is computed on RGB. SSIM is the single-scale Gaussian-window form on
Rec.601 luma, averaged over valid (fully contained) windows.
"""

import math
from typing import Union

import cv2
import numpy as np
import torch

from utils.errors import DimensionMismatchError, ShapeMismatchError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

ImageLike = Union[np.ndarray, torch.Tensor]


def _as_array(img: ImageLike) -> np.ndarray:
    """H×W×3 float64 array from a numpy image or a (1×)3×H×W tensor."""
    if isinstance(img, torch.Tensor):
        t = img.detach().cpu().double()
        if t.dim() == 4:
            t = t[0]
        return t.permute(1, 2, 0).numpy()
    return np.asarray(img, dtype=np.float64)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Images must have equal shapes, got {a.shape} and {b.shape}")


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def psnr(a: ImageLike, b: ImageLike, max_val: float = 1.0) -> float:
    """10·log10(max²/MSE) in dB; identical images give ``math.inf``."""
    a, b = _as_array(a), _as_array(b)
    _check_shapes(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(max_val ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    kernel = cv2.getGaussianKernel(size, sigma)
    return np.outer(kernel, kernel.transpose())


def ssim(a: ImageLike, b: ImageLike) -> float:
    a, b = _as_array(a), _as_array(b)
    _check_shapes(a, b)
    y1, y2 = rgb_to_y(a), rgb_to_y(b)
    if min(y1.shape[:2]) < SSIM_WINDOW:
        raise DimensionMismatchError(f"SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {y1.shape}")

    window = gaussian_window()
    pad = SSIM_WINDOW // 2

    def blur(x):
        # drop the border so only fully contained windows remain
        return cv2.filter2D(x, -1, window)[pad:-pad, pad:-pad]

    mu1, mu2 = blur(y1), blur(y2)
    mu1_sq, mu2_sq, mu1_mu2 = mu1 ** 2, mu2 ** 2, mu1 * mu2
    sigma1_sq = blur(y1 ** 2) - mu1_sq
    sigma2_sq = blur(y2 ** 2) - mu2_sq
    sigma12 = blur(y1 * y2) - mu1_mu2

    ssim_map = ((2 * mu1_mu2 + SSIM_C1) * (2 * sigma12 + SSIM_C2)) / \
               ((mu1_sq + mu2_sq + SSIM_C1) * (sigma1_sq + sigma2_sq + SSIM_C2))
    return float(ssim_map.mean())


def format_db(value: float):
    """Serializable PSNR: ``inf`` becomes the string "inf"."""
    return "inf" if math.isinf(value) else float(value)
