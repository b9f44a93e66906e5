import copy

import numpy as np
import pytest
import torch

from config import ConfigManager
from models.restoration.backbone import CyclicPromptNet
from utils.dataset import make_clean_scenes, make_dataset

TINY = {
    "embedder": {"backend": "toy", "seed": 0, "dim": 16},
    "prompt": {"N": 3, "D": 8, "init_std": 0.02},
    "rpm": {"kernel": 3, "se_ratio": 2},
    "attn": {"scale_mode": "sqrt"},
    "model": {
        "channels": [4, 8, 16, 32],
        "encoder_blocks": [1, 1, 1, 1],
        "decoder_blocks": [1, 1, 1, 1],
        "heads": [1, 1, 1, 1],
        "prompt_block_levels": [4, 3, 2],
        "ffn_expansion": 2.0,
    },
    "train": {
        "batch": 2, "crop": 16, "iterations": 4, "seed": 0, "log_every": 1,
        "checkpoint_every": 0, "device": "cpu",
    },
    "data": {
        "mix": {
            "rain+fog": {"weight": 1.0, "intensity": [0.3, 0.9], "resample": 1},
            "snow": {"weight": 1.0, "intensity": [0.3, 0.9], "resample": 1},
            "raindrop": {"weight": 0.5, "intensity": [0.3, 0.9], "resample": 3},
        },
    },
    "eval": {"device": "cpu"},
    "output": {"progress_bar": False},
}


def tiny_dict(**sections):
    data = copy.deepcopy(TINY)
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return data


@pytest.fixture
def tiny_config(tmp_path):
    data = tiny_dict(output={"base_dir": str(tmp_path / "output")})
    return ConfigManager(data=data)


@pytest.fixture
def make_config(tmp_path):
    def _make(**sections):
        data = tiny_dict(**sections)
        data["output"]["base_dir"] = str(tmp_path / "output")
        return ConfigManager(data=data)
    return _make


@pytest.fixture
def tiny_model(tiny_config):
    torch.manual_seed(0)
    return CyclicPromptNet(tiny_config).eval()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clean_dir(tmp_path):
    out = tmp_path / "clean"
    make_clean_scenes(str(out), count=10, size=16, seed=0)
    return out


@pytest.fixture
def synth_dir(tmp_path, clean_dir):
    out = tmp_path / "synth"
    make_dataset(str(clean_dir), str(out), TINY["data"]["mix"], seed=0, progress_bar=False)
    return out
