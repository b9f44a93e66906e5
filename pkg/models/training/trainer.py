"""
Training loop: random crops and flips -> forward_cyclic -> L1(Ĩ) + L1(Î)
-> AdamW step under a cosine-annealed learning rate.
"""

import math
import os
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch
import yaml
from safetensors.torch import save_file
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR
from tqdm import tqdm

from models.restoration.backbone import CyclicPromptNet
from models.training.losses import loss_terms
from utils.checkpoint import load_state, save_checkpoint
from utils.dataset import PairedWeatherDataset
from utils.errors import ManifestError, NonFiniteLossError
from utils.logger import add_file_handler, logger, progress

LOSS_LOG_HEADER = "step\tlr\tloss\tloss_first\tloss_final\n"


def cosine_lr(step: int, total: int, lr_init: float, lr_final: float) -> float:
    """lr_final + (lr_init - lr_final)·(1 + cos(π·step/(total-1)))/2; step 0 -> lr_init, last -> lr_final."""
    if total <= 1:
        return lr_init
    progress_frac = min(max(step, 0), total - 1) / (total - 1)
    return lr_final + (lr_init - lr_final) * (1.0 + math.cos(math.pi * progress_frac)) / 2.0


def resolve_device(name: str) -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.backends.cudnn.deterministic = True
    torch.backends.cudnn.benchmark = False


@dataclass
class TrainResult:
    checkpoint: str
    steps: int
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"] if self.history else float("nan")


class Trainer:
    """
    Single-writer trainer owning the model, optimizer and sampling generator.

    Args:
        config: ConfigManager
        train_set: training pairs
        out_dir: run directory (checkpoints, loss log, diagnostics)
        val_set: optional pairs for periodic validation PSNR
    """

    def __init__(self, config, train_set: PairedWeatherDataset, out_dir: str,
                 val_set: Optional[PairedWeatherDataset] = None):
        if len(train_set) == 0:
            raise ManifestError("Training set is empty")
        self.config = config
        self.cfg = config.train
        self.train_set = train_set
        self.val_set = val_set
        self.out_dir = out_dir
        self.device = resolve_device(self.cfg.device)
        self.progress_bar = config.output.progress_bar

        os.makedirs(out_dir, exist_ok=True)
        if config.output.log_file:
            add_file_handler(logger, os.path.join(out_dir, config.output.log_file))

        seed_everything(self.cfg.seed)
        self.model = CyclicPromptNet(config).to(self.device)
        self.optimizer = AdamW(self.model.parameters(), lr=self.cfg.lr_init,
                               betas=tuple(self.cfg.betas), weight_decay=self.cfg.weight_decay)
        self.scheduler = LambdaLR(self.optimizer, lr_lambda=lambda t: self.lr_at(t) / self.cfg.lr_init)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.step = 0

        if self.cfg.resume:
            self._resume(self.cfg.resume)

        counts = self.model.parameter_counts()
        logger.info(f"Trainer initialized on {self.device}")
        logger.info(f"Model parameters: {counts['total']:,}")

    def lr_at(self, step: int) -> float:
        return cosine_lr(step, self.cfg.iterations, self.cfg.lr_init, self.cfg.lr_final)

    @property
    def current_lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def _resume(self, path: str) -> None:
        info = load_state(path, self.model, device=str(self.device))
        self.step = info.step
        self.scheduler.last_epoch = self.step
        for group in self.optimizer.param_groups:
            group["lr"] = self.lr_at(self.step)
        # optimizer moments are not stored; the sampling stream restarts from (seed, step)
        self.rng = np.random.default_rng([self.cfg.seed, self.step])
        logger.info(f"Resumed from {path} at step {self.step}")

    # ------------------------------------------------------------------ steps
    def train_step(self, batch: Dict) -> Dict[str, float]:
        self.model.train()
        lq = batch["lq"].to(self.device)
        hq = batch["hq"].to(self.device)
        lr = self.current_lr

        out = self.model.forward_cyclic(lq, batch["captions"])
        terms = loss_terms(out.first, out.final, hq)
        if not torch.isfinite(terms["loss"]):
            dump = self._dump_diagnostics(batch, out, terms)
            raise NonFiniteLossError(f"Non-finite loss at step {self.step}; diagnostics written to {dump}")

        self.optimizer.zero_grad(set_to_none=True)
        terms["loss"].backward()
        if self.cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        self.scheduler.step()

        record = {k: float(v.detach()) for k, v in terms.items()}
        record.update(step=self.step, lr=lr)
        return record

    def _dump_diagnostics(self, batch: Dict, out, terms: Dict[str, torch.Tensor]) -> str:
        dump_dir = os.path.join(self.out_dir, "diagnostics")
        os.makedirs(dump_dir, exist_ok=True)
        stem = os.path.join(dump_dir, f"step_{self.step:07d}")

        bad_params = [name for name, p in self.model.named_parameters() if not torch.isfinite(p).all()]
        state = {
            "step": self.step,
            "lr": self.current_lr,
            "loss": {k: float(v.detach()) for k, v in terms.items()},
            "non_finite_parameters": bad_params,
            "captions": [c.text if hasattr(c, "text") else str(c) for c in batch["captions"]],
            "input_range": [float(batch["lq"].min()), float(batch["lq"].max())],
        }
        with open(stem + ".yaml", "w", encoding="utf-8") as f:
            yaml.safe_dump(state, f, sort_keys=False)
        save_file({
            "lq": batch["lq"].detach().cpu().contiguous(),
            "hq": batch["hq"].detach().cpu().contiguous(),
            "first": out.first.detach().cpu().float().contiguous(),
            "final": out.final.detach().cpu().float().contiguous(),
        }, stem + ".safetensors")
        logger.error(f"Non-finite loss at step {self.step}; {len(bad_params)} non-finite parameter tensors")
        return stem + ".yaml"

    # ------------------------------------------------------------------ loop
    def save(self, path: str) -> str:
        return save_checkpoint(path, self.model, self.config, seed=self.cfg.seed, step=self.step)

    def validate(self) -> Optional[float]:
        if self.val_set is None or len(self.val_set) == 0:
            return None
        from utils.eval import Evaluator

        report = Evaluator(self.model, device=self.device, progress_bar=False).evaluate(self.val_set)
        self.model.train()
        return report.aggregate["psnr"]

    def train(self) -> TrainResult:
        cfg = self.cfg
        log_path = os.path.join(self.out_dir, "loss_log.tsv")
        if self.step == 0 or not os.path.isfile(log_path):
            with open(log_path, "w", encoding="utf-8") as f:
                f.write(LOSS_LOG_HEADER)
        self.config.save_config(os.path.join(self.out_dir, "config.yaml"))

        progress("train", f"{cfg.iterations} iterations, batch {cfg.batch}, crop {cfg.crop}, "
                          f"{len(self.train_set)} pairs")
        history: List[Dict[str, float]] = []
        pbar = tqdm(range(self.step, cfg.iterations), desc="train", disable=not self.progress_bar)
        with open(log_path, "a", encoding="utf-8") as log_file:
            for _ in pbar:
                batch = self.train_set.sample_batch(self.rng, cfg.batch, cfg.crop, cfg.hflip, cfg.vflip)
                record = self.train_step(batch)
                history.append(record)
                log_file.write(f"{record['step']}\t{record['lr']:.12e}\t{record['loss']:.8f}\t"
                               f"{record['loss_first']:.8f}\t{record['loss_final']:.8f}\n")
                self.step += 1

                pbar.set_postfix({"loss": f"{record['loss']:.4f}", "lr": f"{record['lr']:.2e}"})
                if cfg.log_every and self.step % cfg.log_every == 0:
                    logger.info(f"step {self.step}/{cfg.iterations} loss {record['loss']:.5f} "
                                f"(first {record['loss_first']:.5f}, final {record['loss_final']:.5f}) "
                                f"lr {record['lr']:.3e}")
                if cfg.val_every and self.step % cfg.val_every == 0:
                    val_psnr = self.validate()
                    if val_psnr is not None:
                        logger.info(f"step {self.step} validation PSNR {val_psnr:.3f} dB")
                if cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0 and self.step < cfg.iterations:
                    self.save(os.path.join(self.out_dir, "checkpoints", f"step_{self.step:07d}.safetensors"))

        final_path = self.save(os.path.join(self.out_dir, "model.safetensors"))
        progress("train", f"finished at step {self.step}, checkpoint {final_path}", done=True)
        return TrainResult(checkpoint=final_path, steps=self.step, history=history)


def train(config, dataset: PairedWeatherDataset, out_dir: str,
          val_set: Optional[PairedWeatherDataset] = None) -> TrainResult:
    return Trainer(config, dataset, out_dir, val_set=val_set).train()
