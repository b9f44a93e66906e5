"""
Configuration loader and manager for the CyclicPrompt restoration framework.
Handles loading, preset overlays, validation, and access to configuration parameters.
"""

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from utils.errors import ConfigError
from utils.logger import logger


@dataclass
class EmbedderConfig:
    """Frozen image/text embedder and captioner configuration"""
    backend: str = "toy"  # "toy" or "external"
    seed: int = 0
    dim: int = 512
    share_image_encoder: bool = True
    external_command: str = ""
    captioner: str = "metadata"  # "metadata" or "external"
    captioner_command: str = ""
    timeout: float = 60.0


@dataclass
class PromptConfig:
    """Composite context prompt configuration"""
    N: int = 8
    D: int = 64
    init_std: float = 0.02


@dataclass
class RPMConfig:
    """Residual prior modulator configuration"""
    kernel: int = 7
    se_ratio: int = 4


@dataclass
class AttnConfig:
    """Prompt cross-attention configuration"""
    scale_mode: str = "sqrt"  # "paper" or "sqrt"


@dataclass
class ModelConfig:
    """U-shaped transformer backbone configuration"""
    channels: List[int] = field(default_factory=lambda: [16, 32, 64, 128])
    encoder_blocks: List[int] = field(default_factory=lambda: [4, 6, 6, 8])
    decoder_blocks: List[int] = field(default_factory=lambda: [2, 3, 3, 4])
    heads: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    prompt_block_levels: List[int] = field(default_factory=lambda: [4, 3, 2])
    ffn_expansion: float = 2.66
    detach_first_pass: bool = False
    check_finite: bool = False


@dataclass
class AblationConfig:
    """Component switches mirroring the C2P / EPM ablation rows"""
    use_prompt: bool = True
    use_knowledge: bool = True
    use_input_vectors: bool = True
    use_text: bool = True
    use_epm: bool = True
    use_rpm: bool = True


@dataclass
class TrainConfig:
    """Training recipe configuration"""
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    betas: List[float] = field(default_factory=lambda: [0.9, 0.9999])
    weight_decay: float = 1e-4
    batch: int = 4
    crop: int = 64
    iterations: int = 2000
    seed: int = 0
    hflip: bool = True
    vflip: bool = True
    grad_clip: float = 0.0
    log_every: int = 50
    checkpoint_every: int = 500
    val_every: int = 0
    device: str = "auto"
    resume: str = ""


@dataclass
class DataConfig:
    """Synthetic dataset assembly configuration"""
    mix: Dict[str, Dict[str, Any]] = field(default_factory=lambda: {
        "rain+fog": {"weight": 1.0, "intensity": [0.3, 0.9], "resample": 1},
        "raindrop": {"weight": 0.1, "intensity": [0.3, 0.9], "resample": 10},
        "snow": {"weight": 1.0, "intensity": [0.3, 0.9], "resample": 1},
    })
    split: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    seed: int = 0
    size: int = 0


@dataclass
class EvalConfig:
    """Evaluation configuration"""
    both_iterations: bool = False
    device: str = "auto"


@dataclass
class OutputConfig:
    """Output configuration"""
    base_dir: str = "output"
    log_file: str = ""
    progress_bar: bool = True


SECTIONS = {
    "embedder": EmbedderConfig,
    "prompt": PromptConfig,
    "rpm": RPMConfig,
    "attn": AttnConfig,
    "model": ModelConfig,
    "ablation": AblationConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "eval": EvalConfig,
    "output": OutputConfig,
}

PRESETS_DIR = Path(__file__).parent / "presets"


def _build_section(name: str, data: Optional[Dict[str, Any]]):
    cls = SECTIONS[name]
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{name}' must be a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
    return cls(**data)


def deep_merge(base: dict, overrides: dict) -> None:
    for key, value in overrides.items():
        if isinstance(value, dict) and key in base and isinstance(base[key], dict):
            deep_merge(base[key], value)
        else:
            base[key] = value


class ConfigManager:
    """
    Main configuration manager for the CyclicPrompt framework.
    Handles loading, validation, and providing access to configuration settings.
    """

    def __init__(self, config_path: Optional[str] = None, preset: Optional[str] = None,
                 data: Optional[Dict[str, Any]] = None):
        """
        Initialize the configuration manager.

        Args:
            config_path: Path to the configuration file. If None, uses default.
            preset: Optional preset name overlaid on top of the file (e.g. "paper").
            data: Already-parsed configuration mapping; skips reading a file.
        """
        self.config_path = config_path or self._get_default_config_path()
        self.preset = preset
        self.config_data: Dict[str, Any] = {}
        self.embedder: Optional[EmbedderConfig] = None
        self.prompt: Optional[PromptConfig] = None
        self.rpm: Optional[RPMConfig] = None
        self.attn: Optional[AttnConfig] = None
        self.model: Optional[ModelConfig] = None
        self.ablation: Optional[AblationConfig] = None
        self.train: Optional[TrainConfig] = None
        self.data: Optional[DataConfig] = None
        self.eval: Optional[EvalConfig] = None
        self.output: Optional[OutputConfig] = None

        if data is not None:
            self.config_data = copy.deepcopy(data)
            self._parse_config()
            self._validate_config()
        else:
            self.load_config()

    def _get_default_config_path(self) -> str:
        """Get the default configuration file path."""
        current_dir = Path(__file__).parent
        return str(current_dir / "base_config.yaml")

    def load_config(self) -> None:
        """Load and parse the configuration file, then overlay the preset if any."""
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                self.config_data = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise FileNotFoundError(f"Configuration file not found: {self.config_path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in configuration file: {e}")

        if self.preset:
            preset_path = PRESETS_DIR / f"{self.preset}.yaml"
            if not preset_path.is_file():
                raise ConfigError(f"Unknown preset '{self.preset}' (looked for {preset_path})")
            with open(preset_path, 'r', encoding='utf-8') as f:
                deep_merge(self.config_data, yaml.safe_load(f) or {})

        self._parse_config()
        self._validate_config()
        logger.info(f"Configuration loaded successfully from {self.config_path}"
                    + (f" (preset: {self.preset})" if self.preset else ""))

    def _parse_config(self) -> None:
        """Parse the loaded configuration data into structured objects."""
        unknown = sorted(set(self.config_data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"Unknown configuration section(s): {', '.join(unknown)}")
        for name in SECTIONS:
            setattr(self, name, _build_section(name, self.config_data.get(name)))

        if not self.embedder.external_command:
            self.embedder.external_command = os.getenv("CYCLICPROMPT_EMBEDDER_CMD", "")
        if not self.embedder.captioner_command:
            self.embedder.captioner_command = os.getenv("CYCLICPROMPT_CAPTIONER_CMD", "")

    def _validate_config(self) -> None:
        """Validate the loaded configuration."""
        if self.embedder.backend not in ("toy", "external"):
            raise ConfigError(f"Invalid embedder.backend: {self.embedder.backend}. Must be 'toy' or 'external'")
        if self.embedder.captioner not in ("metadata", "external"):
            raise ConfigError(f"Invalid embedder.captioner: {self.embedder.captioner}")
        if self.attn.scale_mode not in ("paper", "sqrt"):
            raise ConfigError(f"Invalid attn.scale_mode: {self.attn.scale_mode}. Must be 'paper' or 'sqrt'")
        if self.prompt.N < 1 or self.prompt.D < 1:
            raise ConfigError("prompt.N and prompt.D must be positive")
        if self.rpm.kernel < 1 or self.rpm.kernel % 2 == 0:
            raise ConfigError(f"rpm.kernel must be odd and >= 1, got {self.rpm.kernel}")
        if self.rpm.se_ratio < 1:
            raise ConfigError(f"rpm.se_ratio must be >= 1, got {self.rpm.se_ratio}")

        m = self.model
        if not (len(m.channels) == len(m.encoder_blocks) == len(m.decoder_blocks) == len(m.heads) == 4):
            raise ConfigError("model.channels, encoder_blocks, decoder_blocks and heads must have 4 levels")
        for lo, hi in zip(m.channels, m.channels[1:]):
            if hi != 2 * lo:
                raise ConfigError(f"model.channels must double per level, got {m.channels}")
        for enc, dec in zip(m.encoder_blocks, m.decoder_blocks):
            if dec != -(-enc // 2):
                raise ConfigError(f"model.decoder_blocks must be ceil(encoder_blocks/2), got {m.decoder_blocks}")
        for c, h in zip(m.channels, m.heads):
            if c % h:
                raise ConfigError(f"model.channels {m.channels} not divisible by heads {m.heads}")
        if len(m.prompt_block_levels) != 3 or len(set(m.prompt_block_levels)) != 3 \
                or not set(m.prompt_block_levels) <= {2, 3, 4}:
            raise ConfigError(f"model.prompt_block_levels must be three distinct levels from 2-4, "
                              f"got {m.prompt_block_levels}")

        a = self.ablation
        if a.use_prompt and not (a.use_knowledge or a.use_input_vectors or a.use_text):
            raise ConfigError("ablation: with use_prompt on, at least one prompt component must be enabled")

        t = self.train
        if not 0 < t.lr_final <= t.lr_init:
            raise ConfigError("train.lr_final must be positive and not exceed train.lr_init")
        if t.iterations < 1 or t.batch < 1:
            raise ConfigError("train.iterations and train.batch must be positive")
        if t.crop % 8:
            raise ConfigError(f"train.crop must be a multiple of 8, got {t.crop}")

        if abs(sum(self.data.split) - 1.0) > 1e-6 or len(self.data.split) != 3:
            raise ConfigError("data.split must be three fractions summing to 1")

    def override_config(self, overrides: Dict[str, Any]) -> None:
        """Override configuration values at runtime."""
        deep_merge(self.config_data, overrides)
        self._parse_config()
        self._validate_config()

    def save_config(self, output_path: str) -> None:
        """Save current configuration to a file."""
        with open(output_path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(self.to_dict(), f, default_flow_style=False, sort_keys=False)

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary format."""
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=False, sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ConfigManager":
        """Rebuild a configuration from a YAML echo (e.g. stored in a checkpoint)."""
        return cls(data=yaml.safe_load(text) or {})

    def create_output_directories(self) -> None:
        """Create necessary output directories."""
        os.makedirs(self.output.base_dir, exist_ok=True)


_config_instance: Optional[ConfigManager] = None


def get_config(config_path: Optional[str] = None, preset: Optional[str] = None) -> ConfigManager:
    """
    Get the global configuration instance.

    Args:
        config_path: Path to configuration file (only used on first call)
        preset: Optional preset name (only used on first call)

    Returns:
        ConfigManager instance
    """
    global _config_instance

    if _config_instance is None:
        _config_instance = ConfigManager(config_path, preset=preset)

    return _config_instance


def reload_config(config_path: Optional[str] = None, preset: Optional[str] = None) -> ConfigManager:
    """
    Reload the configuration.

    Args:
        config_path: Path to configuration file
        preset: Optional preset name

    Returns:
        New ConfigManager instance
    """
    global _config_instance
    _config_instance = ConfigManager(config_path, preset=preset)
    return _config_instance
