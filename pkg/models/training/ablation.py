"""
Component ablation harness.

Each named variant is a config overlay. Variants are trained per seed on the
train manifest and scored on the test manifest; the report carries per-variant
mean/std and flags inversions of the expected ordering
full >= c2p (no erase-and-paste) >= baseline (no prompts).
"""

import copy
import os
import re
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from config import ConfigManager
from config.config_loader import deep_merge
from models.restoration.embedder import Captioner
from models.training.trainer import Trainer
from utils.dataset import PairedWeatherDataset
from utils.errors import ConfigError
from utils.eval import Evaluator
from utils.logger import logger, progress
from utils.metrics import format_db

VARIANTS: Dict[str, Dict[str, Any]] = {
    # prompt rows
    "baseline": {"ablation": {"use_prompt": False}},
    "knowledge": {"ablation": {"use_input_vectors": False, "use_text": False, "use_epm": False}},
    "knowledge+vectors": {"ablation": {"use_text": False, "use_epm": False}},
    "c2p": {"ablation": {"use_epm": False}},
    # erase-and-paste rows
    "c2p+epm": {"ablation": {"use_rpm": False}},
    "full": {},
}

EXPECTED_ORDER = ("full", "c2p", "baseline")

_N_VARIANT = re.compile(r"^n=(\d+)$")


def variant_overrides(name: str) -> Dict[str, Any]:
    """Config overlay of a named variant; ``n=<k>`` sets the input-conditional vector count."""
    match = _N_VARIANT.match(name)
    if match:
        return {"prompt": {"N": int(match.group(1))}}
    if name not in VARIANTS:
        raise ConfigError(f"Unknown ablation variant {name!r}; expected one of {sorted(VARIANTS)} or n=<k>")
    return copy.deepcopy(VARIANTS[name])


def variant_config(base: ConfigManager, name: str, seed: int) -> ConfigManager:
    data = base.to_dict()
    # every variant starts from the full model
    data["ablation"] = {k: True for k in data["ablation"]}
    deep_merge(data, variant_overrides(name))
    deep_merge(data, {"train": {"seed": seed, "resume": ""}})
    return ConfigManager(data=data)


def find_inversions(summary: Dict[str, Dict[str, float]], metric: str = "psnr_mean") -> List[Dict[str, Any]]:
    """Adjacent pairs of EXPECTED_ORDER (both present) whose means are inverted."""
    present = [v for v in EXPECTED_ORDER if v in summary]
    inversions = []
    for better, worse in zip(present, present[1:]):
        gap = summary[better][metric] - summary[worse][metric]
        if gap < 0:
            inversions.append({"expected_higher": better, "expected_lower": worse, "gap": float(gap)})
    return inversions


def summarize(runs: Dict[str, List[Dict[str, float]]]) -> Dict[str, Dict[str, float]]:
    summary = {}
    for name, results in runs.items():
        psnrs = np.array([r["psnr"] for r in results], dtype=np.float64)
        ssims = np.array([r["ssim"] for r in results], dtype=np.float64)
        summary[name] = {
            "psnr_mean": float(psnrs.mean()), "psnr_std": float(psnrs.std()),
            "ssim_mean": float(ssims.mean()), "ssim_std": float(ssims.std()),
            "runs": len(results),
        }
    return summary


def run_ablation(config: ConfigManager, data_dir: str, variants: Sequence[str], seeds: Sequence[int],
                 out_dir: str, report_path: Optional[str] = None) -> Dict[str, Any]:
    for name in variants:
        variant_overrides(name)
    captioner = Captioner.from_config(config.embedder)
    train_set = PairedWeatherDataset.from_manifest(os.path.join(data_dir, "train.tsv"), captioner)
    test_set = PairedWeatherDataset.from_manifest(os.path.join(data_dir, "test.tsv"), captioner)

    runs: Dict[str, List[Dict[str, float]]] = {}
    for name in variants:
        for seed in seeds:
            progress("ablate", f"variant {name} seed {seed}")
            cfg = variant_config(config, name, seed)
            run_dir = os.path.join(out_dir, name.replace("=", "-").replace("+", "-"), f"seed_{seed}")
            trainer = Trainer(cfg, train_set, run_dir)
            result = trainer.train()
            report = Evaluator(trainer.model, device=trainer.device,
                               progress_bar=config.output.progress_bar).evaluate(test_set)
            agg = report.aggregate
            runs.setdefault(name, []).append({"seed": seed, "psnr": agg["psnr"], "ssim": agg["ssim"],
                                              "checkpoint": result.checkpoint})
            logger.info(f"{name} seed {seed}: PSNR {agg['psnr']:.3f} dB, SSIM {agg['ssim']:.4f}")

    summary = summarize(runs)
    inversions = find_inversions(summary)
    for inv in inversions:
        logger.warning(f"Ordering inversion: {inv['expected_higher']} < {inv['expected_lower']} "
                       f"by {-inv['gap']:.3f} dB")

    report = {
        "variants": list(variants),
        "seeds": list(seeds),
        "summary": {k: {m: (format_db(v) if m.startswith("psnr") else v) for m, v in s.items()}
                    for k, s in summary.items()},
        "runs": {k: [{**r, "psnr": format_db(r["psnr"])} for r in rs] for k, rs in runs.items()},
        "inversions": inversions,
        "config": config.to_dict(),
    }
    if report_path:
        os.makedirs(os.path.dirname(os.path.abspath(report_path)), exist_ok=True)
        with open(report_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(report, f, default_flow_style=False, sort_keys=False)
        progress("ablate", f"report written to {report_path}", done=True)
    return report
