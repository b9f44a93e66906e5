"""
Full-reference evaluation of a restoration model on a paired manifest.

Scores Î (and Ĩ with ``both_iterations``) against HQ with PSNR on RGB and SSIM
on luma, and writes a YAML report with stable field names.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
import yaml
from tqdm import tqdm

from utils.dataset import PairedWeatherDataset
from utils.logger import logger, progress
from utils.metrics import format_db, psnr, ssim


@dataclass
class SampleMetrics:
    name: str
    kind: str
    psnr: float
    ssim: float
    psnr_first: Optional[float] = None
    ssim_first: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        out = {"name": self.name, "kind": self.kind, "psnr": format_db(self.psnr), "ssim": float(self.ssim)}
        if self.psnr_first is not None:
            out["psnr_first"] = format_db(self.psnr_first)
            out["ssim_first"] = float(self.ssim_first)
        return out


def _mean(values: List[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def _aggregate(samples: List[SampleMetrics], both: bool) -> Dict[str, float]:
    agg = {
        "count": len(samples),
        "psnr": _mean([s.psnr for s in samples]),
        "ssim": _mean([s.ssim for s in samples]),
    }
    if both:
        agg["psnr_first"] = _mean([s.psnr_first for s in samples])
        agg["ssim_first"] = _mean([s.ssim_first for s in samples])
    return agg


def _serializable(agg: Dict[str, float]) -> Dict[str, Any]:
    return {k: (v if k == "count" else format_db(v)) for k, v in agg.items()}


@dataclass
class MetricReport:
    samples: List[SampleMetrics]
    both_iterations: bool = False
    config: Dict[str, Any] = field(default_factory=dict)
    checkpoint: str = ""

    @property
    def aggregate(self) -> Dict[str, float]:
        return _aggregate(self.samples, self.both_iterations)

    @property
    def per_kind(self) -> Dict[str, Dict[str, float]]:
        kinds = sorted({s.kind for s in self.samples})
        return {k: _aggregate([s for s in self.samples if s.kind == k], self.both_iterations) for k in kinds}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "checkpoint": self.checkpoint,
            "scored": "final+first" if self.both_iterations else "final",
            "aggregate": _serializable(self.aggregate),
            "per_kind": {k: _serializable(v) for k, v in self.per_kind.items()},
            "samples": [s.to_dict() for s in self.samples],
            "config": self.config,
        }

    def save(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, default_flow_style=False, sort_keys=False, allow_unicode=True)
        return path


def score_sample(name: str, kind: str, final, hq, first=None) -> SampleMetrics:
    metrics = SampleMetrics(name=name, kind=kind, psnr=psnr(final, hq), ssim=ssim(final, hq))
    if first is not None:
        metrics.psnr_first = psnr(first, hq)
        metrics.ssim_first = ssim(first, hq)
    return metrics


class Evaluator:
    """
    Args:
        model: anything with ``restore(lq, caption) -> CyclicOutput`` (normally CyclicPromptNet)
        device: device the model lives on
        progress_bar: show a tqdm bar over samples
    """

    def __init__(self, model, device: Union[str, torch.device] = "cpu", progress_bar: bool = True,
                 config: Optional[Dict[str, Any]] = None, checkpoint: str = ""):
        self.model = model
        self.device = torch.device(device)
        self.progress_bar = progress_bar
        self.config = config or {}
        self.checkpoint = checkpoint

    def evaluate(self, dataset: PairedWeatherDataset, both_iterations: bool = False) -> MetricReport:
        if hasattr(self.model, "eval"):
            self.model.eval()
        samples = []
        for i in tqdm(range(len(dataset)), desc="eval", disable=not self.progress_bar):
            item = dataset[i]
            lq = item["lq"].unsqueeze(0).to(self.device)
            out = self.model.restore(lq, [item["caption"]])
            first = out.first[0].cpu() if both_iterations else None
            samples.append(score_sample(item["name"], item["kind"], out.final[0].cpu(), item["hq"], first))
        return MetricReport(samples, both_iterations, self.config, self.checkpoint)


def evaluate(ckpt: str, manifest: str, both_iterations: Optional[bool] = None,
             device: Optional[str] = None, report_path: Optional[str] = None) -> MetricReport:
    """Load ``ckpt``, restore every pair of ``manifest`` and score it."""
    from models.restoration.embedder import Captioner
    from models.training.trainer import resolve_device
    from utils.checkpoint import load_checkpoint

    model, config, _ = load_checkpoint(ckpt, device="cpu")
    dev = resolve_device(device or config.eval.device)
    model.to(dev)
    both = config.eval.both_iterations if both_iterations is None else both_iterations

    dataset = PairedWeatherDataset.from_manifest(manifest, Captioner.from_config(config.embedder))
    progress("eval", f"{len(dataset)} pairs from {manifest}")
    evaluator = Evaluator(model, device=dev, progress_bar=config.output.progress_bar,
                          config=config.to_dict(), checkpoint=os.path.abspath(ckpt))
    report = evaluator.evaluate(dataset, both_iterations=both)

    agg = report.aggregate
    psnr_text = "inf" if math.isinf(agg["psnr"]) else f"{agg['psnr']:.3f}"
    logger.info(f"PSNR {psnr_text} dB, SSIM {agg['ssim']:.4f} over {agg['count']} pairs")
    if report_path:
        report.save(report_path)
        progress("eval", f"report written to {report_path}", done=True)
    return report
