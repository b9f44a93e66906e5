"""
Synthetic paired dataset: procedural clean scenes, degraded/clean PNG pairs,
tab-separated manifests and the in-memory training dataset.

Manifest format (one record per line, paths relative to the manifest):

    # lq	hq	kind	intensity	seed	scene
    train/lq/street_0000_rain-fog.png	train/hq/street_0000.png	rain+fog	0.5123	91812	street
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import cv2
import numpy as np
import torch
from torch.utils.data import Dataset
from tqdm import tqdm

from models.restoration.embedder import Captioner
from utils.degradation import KINDS, WEATHER_STRINGS, DegradationSpec, degrade
from utils.errors import EmptyDirectoryError, ManifestError
from utils.image_io import dequantize, is_image_file, quantize, read_image, to_tensor, write_image
from utils.logger import logger

SPLITS = ("train", "val", "test")
MANIFEST_FIELDS = ("lq", "hq", "kind", "intensity", "seed", "scene")
SCENE_LABELS = ("street", "mountain", "lake", "forest", "city", "field")


def scene_label(path) -> str:
    """Scene label from a file name: ``street_0003.png`` -> ``street``."""
    stem = Path(path).stem
    label = stem.split("_")[0].strip().lower()
    return label or "scene"


def weather_string(kind: str) -> str:
    return WEATHER_STRINGS[kind]


@dataclass
class SamplePair:
    lq: np.ndarray
    hq: np.ndarray
    spec: DegradationSpec
    scene: str

    def __post_init__(self):
        if self.lq.shape != self.hq.shape:
            raise ManifestError(f"lq/hq shapes differ: {self.lq.shape} vs {self.hq.shape}")

    @property
    def metadata(self) -> Dict[str, str]:
        return {"scene": self.scene, "weather": self.spec.weather}

    @property
    def kind(self) -> str:
        return self.spec.kind


@dataclass
class ManifestRecord:
    lq: str
    hq: str
    kind: str
    intensity: float
    seed: int
    scene: str
    root: str = field(default="", compare=False)

    @property
    def lq_path(self) -> str:
        return os.path.join(self.root, self.lq)

    @property
    def hq_path(self) -> str:
        return os.path.join(self.root, self.hq)

    @property
    def spec(self) -> DegradationSpec:
        return DegradationSpec.from_intensity(self.kind, self.intensity, self.seed)

    def to_line(self) -> str:
        return "\t".join([self.lq, self.hq, self.kind, repr(float(self.intensity)), str(self.seed), self.scene])

    def load(self) -> SamplePair:
        return SamplePair(lq=read_image(self.lq_path), hq=read_image(self.hq_path), spec=self.spec, scene=self.scene)


# ---------------------------------------------------------------------------
# Manifests

def write_manifest(path: str, records: Sequence[ManifestRecord]) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# " + "\t".join(MANIFEST_FIELDS) + "\n")
        for record in records:
            f.write(record.to_line() + "\n")
    return path


def read_manifest(path: str, check_files: bool = True) -> List[ManifestRecord]:
    if not os.path.isfile(path):
        raise ManifestError(f"Manifest not found: {path}")
    root = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != len(MANIFEST_FIELDS):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields, got {len(parts)}")
            lq, hq, kind, intensity, seed, scene = parts
            if kind not in KINDS:
                raise ManifestError(f"{path}:{lineno}: unknown degradation kind {kind!r}")
            try:
                record = ManifestRecord(lq, hq, kind, float(intensity), int(seed), scene, root=root)
                DegradationSpec.from_intensity(record.kind, record.intensity, record.seed)
            except ValueError as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from e
            if check_files:
                for p in (record.lq_path, record.hq_path):
                    if not os.path.isfile(p):
                        raise ManifestError(f"{path}:{lineno}: missing image {p}")
            records.append(record)
    if not records:
        raise ManifestError(f"Manifest {path} has no records")
    return records


def load_pairs(records: Sequence[ManifestRecord]) -> List[SamplePair]:
    return [r.load() for r in records]


# ---------------------------------------------------------------------------
# Procedural clean scenes

def _draw_scene(label: str, size: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((size, size, 3), dtype=np.float32)
    horizon = int(size * rng.uniform(0.35, 0.65))

    sky_top = rng.uniform([0.25, 0.45, 0.70], [0.45, 0.65, 0.95])
    sky_bottom = rng.uniform([0.65, 0.75, 0.85], [0.85, 0.90, 1.00])
    ramp = np.linspace(0.0, 1.0, max(horizon, 1))[:, None, None]
    img[:horizon] = (sky_top * (1 - ramp) + sky_bottom * ramp).astype(np.float32)

    ground = {
        "street": [0.35, 0.35, 0.38], "city": [0.40, 0.38, 0.36], "lake": [0.20, 0.35, 0.55],
        "forest": [0.15, 0.35, 0.15], "field": [0.45, 0.55, 0.20], "mountain": [0.35, 0.40, 0.30],
    }.get(label, [0.4, 0.4, 0.4])
    g = np.clip(np.asarray(ground) + rng.uniform(-0.05, 0.05, 3), 0, 1)
    shade = np.linspace(1.0, 0.7, size - horizon)[:, None, None]
    img[horizon:] = (g * shade).astype(np.float32)

    canvas = img.copy()
    n_objects = int(rng.integers(3, 8))
    for _ in range(n_objects):
        color = tuple(float(c) for c in rng.uniform(0.05, 0.95, 3))
        if label in ("street", "city"):
            w, h = int(rng.integers(size // 10, size // 4)), int(rng.integers(size // 6, size // 2))
            x = int(rng.integers(0, size - w))
            cv2.rectangle(canvas, (x, horizon - h), (x + w, horizon + 2), color, thickness=-1)
            for wy in range(horizon - h + 3, horizon - 2, max(3, size // 16)):
                cv2.line(canvas, (x + 2, wy), (x + w - 2, wy), (0.9, 0.85, 0.5), 1)
        elif label == "mountain":
            base = int(rng.integers(size // 4, size // 2))
            x = int(rng.integers(0, size))
            peak = (x, max(0, horizon - int(rng.integers(size // 6, size // 2))))
            pts = np.array([[x - base, horizon], peak, [x + base, horizon]], dtype=np.int32)
            cv2.fillPoly(canvas, [pts], color)
        elif label == "forest":
            x, r = int(rng.integers(0, size)), int(rng.integers(size // 16 + 1, size // 6 + 2))
            cv2.line(canvas, (x, horizon + r), (x, horizon - r), (0.30, 0.20, 0.10), max(1, r // 3))
            cv2.circle(canvas, (x, horizon - r), r, (0.1, float(rng.uniform(0.3, 0.6)), 0.1), -1)
        elif label == "lake":
            cx, cy = int(rng.integers(0, size)), int(rng.integers(horizon, size))
            axes = (int(rng.integers(size // 8, size // 3)), int(rng.integers(size // 16 + 1, size // 8 + 2)))
            cv2.ellipse(canvas, (cx, cy), axes, 0, 0, 360, (0.25, 0.45, 0.70), -1)
        else:
            y = int(rng.integers(horizon, size))
            cv2.line(canvas, (0, y), (size - 1, y + int(rng.integers(-3, 4))), color, 1)
    sun = (int(rng.integers(0, size)), int(rng.integers(0, max(1, horizon // 2))))
    cv2.circle(canvas, sun, max(2, size // 16), (1.0, 0.95, 0.8), -1)
    return np.clip(canvas, 0.0, 1.0)


def make_clean_scenes(out_dir: str, count: int = 24, size: int = 64, seed: int = 0) -> List[str]:
    """Write ``count`` procedural clean images named ``<scene>_<index>.png``."""
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for idx in range(count):
        label = SCENE_LABELS[idx % len(SCENE_LABELS)]
        path = os.path.join(out_dir, f"{label}_{idx:04d}.png")
        write_image(path, _draw_scene(label, size, rng))
        paths.append(path)
    logger.info(f"Wrote {count} clean scenes ({size}x{size}) to {out_dir}")
    return paths


# ---------------------------------------------------------------------------
# Dataset assembly

def _fit_size(img: np.ndarray, size: int) -> np.ndarray:
    """Center-crop to square then resize to ``size``; 0 keeps the image."""
    if not size:
        return img
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    square = img[top:top + s, left:left + s]
    if s != size:
        square = cv2.resize(square, (size, size), interpolation=cv2.INTER_AREA)
    return square


def _split_counts(n: int, fractions: Sequence[float]) -> List[int]:
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    return [n - n_val - n_test, n_val, n_test]


def _normalize_mix(mix: Mapping[str, Mapping[str, Any]]) -> Dict[str, Dict[str, Any]]:
    out = {}
    for kind, entry in mix.items():
        if kind not in KINDS:
            raise ManifestError(f"Unknown degradation kind in mix: {kind!r}")
        lo, hi = entry.get("intensity", [0.3, 0.9])
        out[kind] = {
            "weight": float(entry.get("weight", 1.0)),
            "intensity": (float(lo), float(hi)),
            "resample": int(entry.get("resample", 1)),
        }
    if not out or sum(e["weight"] for e in out.values()) <= 0:
        raise ManifestError("Degradation mix needs at least one kind with positive weight")
    return out


def make_dataset(clean_dir: str, out_dir: str, spec_mix: Mapping[str, Mapping[str, Any]],
                 seed: int = 0, split: Sequence[float] = (0.8, 0.1, 0.1), size: int = 0,
                 progress_bar: bool = True) -> Dict[str, List[ManifestRecord]]:
    """
    Degrade every clean image once with a kind drawn from ``spec_mix`` and write
    ``<out_dir>/{train,val,test}.tsv``. Minority kinds are replicated
    ``resample`` times in the train manifest only.
    """
    if not os.path.isdir(clean_dir):
        raise EmptyDirectoryError(f"Clean image directory not found: {clean_dir}")
    files = sorted(f for f in os.listdir(clean_dir) if is_image_file(f))
    if not files:
        raise EmptyDirectoryError(f"No images found in {clean_dir}")

    mix = _normalize_mix(spec_mix)
    kinds = sorted(mix)
    weights = np.array([mix[k]["weight"] for k in kinds], dtype=np.float64)
    weights /= weights.sum()

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(files))
    counts = _split_counts(len(files), split)
    bounds = np.cumsum([0] + counts)
    split_of = {}
    for s, name in enumerate(SPLITS):
        for i in order[bounds[s]:bounds[s + 1]]:
            split_of[int(i)] = name

    records: Dict[str, List[ManifestRecord]] = {name: [] for name in SPLITS}
    for i, fname in enumerate(tqdm(files, desc="synth", disable=not progress_bar)):
        kind = kinds[int(rng.choice(len(kinds), p=weights))]
        lo, hi = mix[kind]["intensity"]
        intensity = round(float(rng.uniform(lo, hi)), 4)
        sample_seed = int(rng.integers(0, 2 ** 31 - 1))

        # degrade the 8-bit clean image so the pair regenerates exactly from disk
        hq = dequantize(quantize(_fit_size(read_image(os.path.join(clean_dir, fname)), size)))
        spec = DegradationSpec.from_intensity(kind, intensity, sample_seed)
        lq = degrade(hq, spec)

        name = split_of[i]
        stem = Path(fname).stem
        hq_rel = f"{name}/hq/{stem}.png"
        lq_rel = f"{name}/lq/{stem}_{kind.replace('+', '-')}.png"
        write_image(os.path.join(out_dir, hq_rel), hq)
        write_image(os.path.join(out_dir, lq_rel), lq)

        record = ManifestRecord(lq_rel, hq_rel, kind, intensity, sample_seed, scene_label(fname), root=out_dir)
        repeat = mix[kind]["resample"] if name == "train" else 1
        records[name].extend([record] * repeat)

    for name in SPLITS:
        write_manifest(os.path.join(out_dir, f"{name}.tsv"), records[name])
    summary = ", ".join(f"{name}={len(records[name])}" for name in SPLITS)
    logger.info(f"Synthesized {len(files)} pairs into {out_dir} ({summary})")
    return records


# ---------------------------------------------------------------------------
# Training / evaluation dataset

def augment(lq: np.ndarray, hq: np.ndarray, rng: np.random.Generator, crop: int,
            hflip: bool = True, vflip: bool = True):
    """Aligned random crop (reflect-padded when smaller than ``crop``) and flips."""
    h, w = lq.shape[:2]
    if h < crop or w < crop:
        pad = ((0, max(0, crop - h)), (0, max(0, crop - w)), (0, 0))
        lq, hq = np.pad(lq, pad, mode="reflect"), np.pad(hq, pad, mode="reflect")
        h, w = lq.shape[:2]
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    lq, hq = lq[top:top + crop, left:left + crop], hq[top:top + crop, left:left + crop]
    if hflip and rng.random() < 0.5:
        lq, hq = lq[:, ::-1], hq[:, ::-1]
    if vflip and rng.random() < 0.5:
        lq, hq = lq[::-1], hq[::-1]
    return np.ascontiguousarray(lq), np.ascontiguousarray(hq)


class PairedWeatherDataset(Dataset):
    """Manifest-backed pairs held in memory, with their captions resolved once."""

    def __init__(self, records: Sequence[ManifestRecord], captioner=None):
        self.records = list(records)
        if not self.records:
            raise ManifestError("Dataset is empty")
        # resampled records share files; read each once
        cache: Dict[tuple, SamplePair] = {}
        self.pairs: List[SamplePair] = []
        for r in self.records:
            key = (r.lq_path, r.hq_path)
            if key not in cache:
                cache[key] = r.load()
            self.pairs.append(cache[key])
        captioner = captioner or Captioner()
        self.captions = [captioner.generate_caption(p) for p in self.pairs]

    @classmethod
    def from_manifest(cls, path: str, captioner=None) -> "PairedWeatherDataset":
        return cls(read_manifest(path), captioner)

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, index: int) -> Dict[str, Any]:
        pair = self.pairs[index]
        return {
            "lq": to_tensor(pair.lq),
            "hq": to_tensor(pair.hq),
            "caption": self.captions[index],
            "kind": pair.kind,
            "name": Path(self.records[index].lq).name,
        }

    def sample_batch(self, rng: np.random.Generator, batch: int, crop: int,
                     hflip: bool = True, vflip: bool = True) -> Dict[str, Any]:
        """Draw ``batch`` augmented crops with the caller's generator."""
        idx = rng.integers(0, len(self.pairs), size=batch)
        lqs, hqs = [], []
        for i in idx:
            lq, hq = augment(self.pairs[i].lq, self.pairs[i].hq, rng, crop, hflip, vflip)
            lqs.append(to_tensor(lq))
            hqs.append(to_tensor(hq))
        return {
            "lq": torch.stack(lqs),
            "hq": torch.stack(hqs),
            "captions": [self.captions[i] for i in idx],
            "index": idx,
        }
