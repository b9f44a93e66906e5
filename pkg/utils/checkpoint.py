"""
Checkpoint persistence for ModelState.

A checkpoint is a safetensors file (parameter name -> shape + little-endian
float32 data) whose metadata carries the format version, the YAML echo of the
resolved configuration, the seed and the training step.
"""

import os
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
from safetensors import safe_open
from safetensors.torch import load_file, save_file

from utils.errors import CheckpointVersionError
from utils.logger import logger

FORMAT_NAME = "cyclicprompt"
FORMAT_VERSION = "1"


@dataclass
class CheckpointInfo:
    path: str
    format_version: str
    seed: int
    step: int
    config_yaml: str
    extra: Dict[str, str]


def save_checkpoint(path: str, model: torch.nn.Module, config, seed: int, step: int = 0,
                    extra: Optional[Dict[str, str]] = None) -> str:
    """Write model parameters and persistent buffers with the config echo."""
    tensors = {name: t.detach().to("cpu", torch.float32).contiguous()
               for name, t in model.state_dict().items()}
    metadata = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "config": config.to_yaml(),
        "seed": str(seed),
        "step": str(step),
    }
    for key, value in (extra or {}).items():
        metadata[f"extra.{key}"] = str(value)

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_file(tensors, path, metadata=metadata)
    logger.debug(f"Saved checkpoint {path} (step {step}, {len(tensors)} tensors)")
    return path


def read_checkpoint_info(path: str) -> CheckpointInfo:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with safe_open(path, framework="pt") as f:
        metadata = f.metadata() or {}

    version = metadata.get("format_version")
    if metadata.get("format") != FORMAT_NAME or version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"Checkpoint {path} has format {metadata.get('format')!r} version {version!r}; "
            f"expected {FORMAT_NAME!r} version {FORMAT_VERSION!r}")
    extra = {k[len("extra."):]: v for k, v in metadata.items() if k.startswith("extra.")}
    return CheckpointInfo(path=path, format_version=version, seed=int(metadata.get("seed", 0)),
                          step=int(metadata.get("step", 0)), config_yaml=metadata.get("config", ""),
                          extra=extra)


def load_state(path: str, model: torch.nn.Module, device: str = "cpu") -> CheckpointInfo:
    """Load parameters into an existing model after checking the format version."""
    info = read_checkpoint_info(path)
    state = load_file(path, device=str(device))
    model.load_state_dict(state)
    return info


def load_checkpoint(path: str, device: str = "cpu") -> Tuple[torch.nn.Module, "ConfigManager", CheckpointInfo]:
    """Rebuild the model from the config echo and load its parameters."""
    from config import ConfigManager
    from models.restoration.backbone import CyclicPromptNet

    info = read_checkpoint_info(path)
    config = ConfigManager.from_yaml(info.config_yaml)
    model = CyclicPromptNet(config)
    model.load_state_dict(load_file(path, device="cpu"))
    model.to(device).eval()
    logger.info(f"Loaded checkpoint {path} (step {info.step}, seed {info.seed})")
    return model, config, info
