"""
Configuration module for the CyclicPrompt restoration framework.
Provides easy access to configuration management.
"""

from .config_loader import (
    ConfigManager,
    get_config,
    reload_config,
    EmbedderConfig,
    PromptConfig,
    RPMConfig,
    AttnConfig,
    ModelConfig,
    AblationConfig,
    TrainConfig,
    DataConfig,
    EvalConfig,
    OutputConfig,
)

__all__ = [
    "ConfigManager",
    "get_config",
    "reload_config",
    "EmbedderConfig",
    "PromptConfig",
    "RPMConfig",
    "AttnConfig",
    "ModelConfig",
    "AblationConfig",
    "TrainConfig",
    "DataConfig",
    "EvalConfig",
    "OutputConfig",
]
