"""
Deterministic synthetic weather degradations on H×W×3 float images in [0, 1].

Every generator is a pure function of (image, spec): randomness comes only
from ``np.random.default_rng(spec.seed)``. Intensity 0 returns the clean
image unchanged for every kind.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import cv2
import numpy as np

from utils.errors import ChannelCountError, InvalidDegradationError

KINDS = ("rain", "fog", "rain+fog", "snow", "raindrop")

WEATHER_STRINGS = {
    "rain": "rain",
    "fog": "fog",
    "rain+fog": "rain and fog",
    "snow": "snow",
    "raindrop": "raindrops",
}


@dataclass(frozen=True)
class FogParams:
    beta: float
    airlight: Tuple[float, float, float] = (0.8, 0.8, 0.8)
    depth_near: float = 0.1
    depth_far: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise InvalidDegradationError(f"Fog scattering coefficient must be >= 0, got {self.beta}")
        if len(self.airlight) != 3 or not all(0.0 <= a <= 1.0 for a in self.airlight):
            raise InvalidDegradationError(f"Airlight must be three values in [0, 1], got {self.airlight}")
        if not 0.0 <= self.depth_near <= self.depth_far:
            raise InvalidDegradationError("Fog depth ramp needs 0 <= depth_near <= depth_far")


@dataclass(frozen=True)
class RainParams:
    count: int
    length: int = 10
    angle: float = 0.0  # degrees from vertical
    opacity: float = 0.5
    width: int = 1

    def __post_init__(self):
        if self.count < 0 or self.length < 1 or self.width < 1:
            raise InvalidDegradationError("Rain needs count >= 0, length >= 1 and width >= 1")
        if not 0.0 <= self.opacity <= 1.0:
            raise InvalidDegradationError(f"Rain opacity must be in [0, 1], got {self.opacity}")


@dataclass(frozen=True)
class SnowParams:
    count: int
    radius: float = 1.5
    opacity: float = 0.8

    def __post_init__(self):
        if self.count < 0 or self.radius <= 0:
            raise InvalidDegradationError("Snow needs count >= 0 and radius > 0")
        if not 0.0 <= self.opacity <= 1.0:
            raise InvalidDegradationError(f"Snow opacity must be in [0, 1], got {self.opacity}")


@dataclass(frozen=True)
class RaindropParams:
    count: int
    radius: float = 6.0
    blur_sigma: float = 2.0
    brightness: float = 0.03

    def __post_init__(self):
        if self.count < 0 or self.radius <= 0 or self.blur_sigma <= 0:
            raise InvalidDegradationError("Raindrops need count >= 0, radius > 0 and blur_sigma > 0")
        if not 0.0 <= self.brightness <= 1.0:
            raise InvalidDegradationError(f"Raindrop brightness must be in [0, 1], got {self.brightness}")


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    intensity: float
    seed: int
    rain: Optional[RainParams] = None
    fog: Optional[FogParams] = None
    snow: Optional[SnowParams] = None
    raindrop: Optional[RaindropParams] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidDegradationError(f"Unknown degradation kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.intensity <= 1.0:
            raise InvalidDegradationError(f"Intensity must be in [0, 1], got {self.intensity}")
        needed = {
            "rain": ("rain",), "fog": ("fog",), "rain+fog": ("rain", "fog"),
            "snow": ("snow",), "raindrop": ("raindrop",),
        }[self.kind]
        missing = [name for name in needed if getattr(self, name) is None]
        if missing:
            raise InvalidDegradationError(f"Spec of kind {self.kind!r} lacks params: {', '.join(missing)}")

    @property
    def weather(self) -> str:
        return WEATHER_STRINGS[self.kind]

    @classmethod
    def from_intensity(cls, kind: str, intensity: float, seed: int) -> "DegradationSpec":
        """Monotone map from intensity in [0, 1] to kind-specific params; 0 is identity."""
        if kind not in KINDS:
            raise InvalidDegradationError(f"Unknown degradation kind {kind!r}; expected one of {KINDS}")
        i = float(intensity)
        if not 0.0 <= i <= 1.0:
            raise InvalidDegradationError(f"Intensity must be in [0, 1], got {intensity}")
        # shape parameters that do not change strength come from the seed
        rng = np.random.default_rng(seed)
        angle = float(rng.uniform(-25.0, 25.0))
        tint = float(rng.uniform(-0.05, 0.05))

        params = {}
        if kind in ("rain", "rain+fog"):
            params["rain"] = RainParams(count=int(round(300 * i)), length=int(round(4 + 16 * i)),
                                        angle=angle, opacity=0.2 + 0.6 * i)
        if kind in ("fog", "rain+fog"):
            a = 0.75 + 0.15 * i
            params["fog"] = FogParams(beta=2.5 * i,
                                      airlight=(float(np.clip(a + tint, 0, 1)), a, float(np.clip(a - tint, 0, 1))))
        if kind == "snow":
            params["snow"] = SnowParams(count=int(round(200 * i)), radius=0.8 + 2.2 * i, opacity=0.5 + 0.5 * i)
        if kind == "raindrop":
            params["raindrop"] = RaindropParams(count=int(round(12 * i)), radius=3.0 + 9.0 * i,
                                                blur_sigma=1.0 + 3.0 * i, brightness=0.05 * i)
        return cls(kind=kind, intensity=i, seed=int(seed), **params)


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ChannelCountError(f"Expected H×W×3 image, got shape {img.shape}")


def depth_ramp(height: int, width: int, near: float = 0.1, far: float = 1.0) -> np.ndarray:
    """Vertical synthetic depth: the top row is farthest."""
    column = np.linspace(far, near, height, dtype=np.float64)
    return np.repeat(column[:, None], width, axis=1)


def apply_fog(img: np.ndarray, beta: float, airlight, depth: np.ndarray) -> np.ndarray:
    """Atmospheric scattering: I = img·t + A·(1 − t), t = exp(−β·depth)."""
    _check_image(img)
    if beta < 0:
        raise InvalidDegradationError(f"Fog scattering coefficient must be >= 0, got {beta}")
    if np.any(np.asarray(depth) < 0):
        raise InvalidDegradationError("Fog depth must be non-negative")
    if beta == 0:
        return img.copy()
    t = np.exp(-beta * np.asarray(depth, dtype=np.float64))[..., None]
    a = np.asarray(airlight, dtype=np.float64).reshape(1, 1, 3)
    out = img.astype(np.float64) * t + a * (1.0 - t)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def _apply_fog_params(img: np.ndarray, params: FogParams) -> np.ndarray:
    depth = depth_ramp(img.shape[0], img.shape[1], params.depth_near, params.depth_far)
    return apply_fog(img, params.beta, params.airlight, depth)


def rain_layer(height: int, width: int, params: RainParams, seed: int) -> np.ndarray:
    """Streak mask in [0, 1] of antialiased oriented line segments."""
    rng = np.random.default_rng(seed)
    layer = np.zeros((height, width), dtype=np.uint8)
    theta = math.radians(params.angle)
    dx, dy = params.length * math.sin(theta), params.length * math.cos(theta)
    # start points may sit above/left of the frame so streaks enter it
    xs = rng.uniform(-abs(dx), width, size=params.count)
    ys = rng.uniform(-dy, height, size=params.count)
    for x, y in zip(xs, ys):
        p0 = (int(round(x)), int(round(y)))
        p1 = (int(round(x + dx)), int(round(y + dy)))
        cv2.line(layer, p0, p1, color=255, thickness=params.width, lineType=cv2.LINE_AA)
    return layer.astype(np.float64) / 255.0


def apply_rain(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Additive bright streaks; ``rain+fog`` composes rain then fog."""
    _check_image(img)
    if spec.rain is None:
        raise InvalidDegradationError(f"Spec of kind {spec.kind!r} has no rain params")
    if spec.rain.count > 0:
        layer = rain_layer(img.shape[0], img.shape[1], spec.rain, spec.seed)
        out = np.clip(img.astype(np.float64) + spec.rain.opacity * layer[..., None], 0.0, 1.0).astype(img.dtype)
    else:
        out = img.copy()
    if spec.kind == "rain+fog":
        out = _apply_fog_params(out, spec.fog)
    return out


def sample_snow_centers(height: int, width: int, count: int, seed: int) -> np.ndarray:
    """count×2 array of (x, y) flake centers inside the image bounds."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0, width - 1, size=count)
    ys = rng.uniform(0, height - 1, size=count)
    return np.stack([xs, ys], axis=1)


def snow_layer(height: int, width: int, params: SnowParams, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Soft flakes with Gaussian falloff; returns (layer in [0, 1], centers)."""
    centers = sample_snow_centers(height, width, params.count, seed)
    layer = np.zeros((height, width), dtype=np.float64)
    reach = int(math.ceil(3 * params.radius))
    for x, y in centers:
        x0, x1 = max(0, int(x) - reach), min(width, int(x) + reach + 2)
        y0, y1 = max(0, int(y) - reach), min(height, int(y) + reach + 2)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d2 = (xx - x) ** 2 + (yy - y) ** 2
        layer[y0:y1, x0:x1] += np.exp(-d2 / (2 * params.radius ** 2))
    return np.minimum(layer, 1.0), centers


def apply_snow(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    _check_image(img)
    if spec.snow is None:
        raise InvalidDegradationError(f"Spec of kind {spec.kind!r} has no snow params")
    if spec.snow.count == 0:
        return img.copy()
    layer, _ = snow_layer(img.shape[0], img.shape[1], spec.snow, spec.seed)
    out = img.astype(np.float64) + spec.snow.opacity * layer[..., None]
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def raindrop_mask(height: int, width: int, params: RaindropParams, seed: int) -> np.ndarray:
    """Union of soft discs (1 inside, smooth edge), values in [0, 1]."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0, width - 1, size=params.count)
    ys = rng.uniform(0, height - 1, size=params.count)
    radii = params.radius * rng.uniform(0.6, 1.0, size=params.count)
    yy, xx = np.mgrid[0:height, 0:width]
    mask = np.zeros((height, width), dtype=np.float64)
    for x, y, r in zip(xs, ys, radii):
        d = np.sqrt((xx - x) ** 2 + (yy - y) ** 2) / r
        edge = np.clip((1.0 - d) / 0.3, 0.0, 1.0)
        mask = np.maximum(mask, edge * edge * (3 - 2 * edge))
    return mask


def apply_raindrop(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Lens drops: locally blurred and slightly brightened soft circles."""
    _check_image(img)
    if spec.raindrop is None:
        raise InvalidDegradationError(f"Spec of kind {spec.kind!r} has no raindrop params")
    p = spec.raindrop
    if p.count == 0:
        return img.copy()
    base = img.astype(np.float64)
    blurred = cv2.GaussianBlur(base, (0, 0), sigmaX=p.blur_sigma, borderType=cv2.BORDER_REFLECT)
    drops = np.clip(blurred + p.brightness, 0.0, 1.0)
    mask = raindrop_mask(img.shape[0], img.shape[1], p, spec.seed)[..., None]
    out = base * (1.0 - mask) + drops * mask
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def degrade(hq: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply ``spec`` to a clean image."""
    _check_image(hq)
    if spec.intensity == 0:
        return hq.copy()
    if spec.kind in ("rain", "rain+fog"):
        return apply_rain(hq, spec)
    if spec.kind == "fog":
        return _apply_fog_params(hq, spec.fog)
    if spec.kind == "snow":
        return apply_snow(hq, spec)
    return apply_raindrop(hq, spec)
