"""
Exception hierarchy for the CyclicPrompt restoration framework.

Every error derives from ``CyclicPromptError`` and from the closest builtin,
so ``except ValueError`` keeps working for callers that do not know this module.
"""


class CyclicPromptError(Exception):
    """Base class for all framework errors."""


class ConfigError(CyclicPromptError, ValueError):
    """Unknown configuration key or invalid configuration value."""


# Shapes and widths

class DimensionMismatchError(CyclicPromptError, ValueError):
    """Input tensor has the wrong rank or channel layout."""


class WidthMismatchError(CyclicPromptError, ValueError):
    """Token or embedding width does not match the projection width."""


class ShapeMismatchError(CyclicPromptError, ValueError):
    """Two tensors that must share a shape do not."""


class ChannelCountError(CyclicPromptError, ValueError):
    """Image is not 3-channel RGB."""


class DivisibilityError(CyclicPromptError, ValueError):
    """Spatial size is not divisible by the encoder's total stride."""


class UnknownLevelError(CyclicPromptError, KeyError):
    """No prompt block / RPM is attached to the requested decoder level."""


# Numerics

class NonFiniteInputError(CyclicPromptError, ValueError):
    """NaN or Inf entered an operation that requires finite inputs."""


class NonFiniteActivationError(CyclicPromptError, RuntimeError):
    """A transformer block produced NaN or Inf activations."""


class NonFiniteLossError(CyclicPromptError, RuntimeError):
    """Training loss became NaN or Inf."""


# Prompts and iterations

class ContextMismatchError(CyclicPromptError, ValueError):
    """Iteration index and prompt form / residual presence disagree."""


class EmptyCaptionError(CyclicPromptError, ValueError):
    """Caption text is empty after stripping."""


class MissingMetadataError(CyclicPromptError, ValueError):
    """Caption metadata is missing and no external captioner is configured."""


class BackendUnavailableError(CyclicPromptError, RuntimeError):
    """An external embedding or captioning backend cannot be reached."""


# Data

class InvalidDegradationError(CyclicPromptError, ValueError):
    """Degradation parameters violate their ranges (e.g. negative beta)."""


class EmptyDirectoryError(CyclicPromptError, FileNotFoundError):
    """Clean-image directory contains no readable images."""


class UnreadableImageError(CyclicPromptError, OSError):
    """Image file exists but cannot be decoded."""


class ManifestError(CyclicPromptError, ValueError):
    """Manifest file is missing, malformed or points to missing images."""


class CheckpointVersionError(CyclicPromptError, ValueError):
    """Checkpoint format version is not supported by this build."""
