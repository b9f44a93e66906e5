import os
import shlex
import shutil
import subprocess
import tempfile
from typing import List

import numpy as np

from utils.errors import BackendUnavailableError, DimensionMismatchError
from utils.logger import logger


def _build_runner(command: str) -> List[str]:
    """Resolve the backend invocation prefix.

    The first token must be an executable on PATH or an existing file; the
    remaining tokens are passed through unchanged.
    """
    if not command or not command.strip():
        return []
    tokens = shlex.split(command)
    exe = tokens[0]
    resolved = shutil.which(exe) or (exe if os.path.isfile(exe) else "")
    if not resolved:
        logger.warning(f"external backend runner not resolved: {exe}")
        return []
    return [resolved, *tokens[1:]]


def is_backend_available(command: str) -> bool:
    """Check if the external backend executable can be invoked."""
    return bool(_build_runner(command))


def _run(runner: List[str], mode: str, input_path: str, output_path: str, timeout: float) -> None:
    cmd = [*runner, mode, input_path, output_path]
    logger.debug(f"external backend cmd: {' '.join(cmd)}")
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise BackendUnavailableError(f"external backend failed to run: {e}") from e
    if proc.returncode != 0:
        _stderr_head = (proc.stderr or "")[:500].replace("\n", " ")
        raise BackendUnavailableError(
            f"external backend exited with code {proc.returncode}: {_stderr_head}")
    if not os.path.isfile(output_path):
        raise BackendUnavailableError(f"external backend produced no output file: {output_path}")


class ExternalBackend:
    """
    File-exchange client for an out-of-process encoder / captioner.

    Protocol: ``<command> <mode> <input_path> <output_path>`` where mode is one of
    ``image`` (input PNG), ``text`` (input UTF-8 caption file) or ``caption``
    (input PNG). Embedding modes write ``dim`` little-endian float32 values;
    caption mode writes a UTF-8 text file.
    """

    def __init__(self, command: str, dim: int = 512, timeout: float = 60.0):
        self.command = command
        self.dim = dim
        self.timeout = timeout
        self._runner = _build_runner(command)

    @property
    def available(self) -> bool:
        return bool(self._runner)

    def _require(self) -> None:
        if not self._runner:
            raise BackendUnavailableError(
                f"external backend selected but not reachable (command: {self.command!r})")

    def _read_vector(self, path: str) -> np.ndarray:
        values = np.fromfile(path, dtype="<f4")
        if values.size != self.dim:
            raise DimensionMismatchError(
                f"external backend returned {values.size} values, expected {self.dim}")
        return values.astype(np.float32)

    def embed_image_file(self, png_path: str) -> np.ndarray:
        self._require()
        with tempfile.TemporaryDirectory(prefix="cyclicprompt_") as tmp:
            out = os.path.join(tmp, "embedding.f32")
            _run(self._runner, "image", png_path, out, self.timeout)
            return self._read_vector(out)

    def embed_text(self, text: str) -> np.ndarray:
        self._require()
        with tempfile.TemporaryDirectory(prefix="cyclicprompt_") as tmp:
            src = os.path.join(tmp, "caption.txt")
            out = os.path.join(tmp, "embedding.f32")
            with open(src, "w", encoding="utf-8") as f:
                f.write(text)
            _run(self._runner, "text", src, out, self.timeout)
            return self._read_vector(out)

    def caption_image_file(self, png_path: str) -> str:
        self._require()
        with tempfile.TemporaryDirectory(prefix="cyclicprompt_") as tmp:
            out = os.path.join(tmp, "caption.txt")
            _run(self._runner, "caption", png_path, out, self.timeout)
            with open(out, "r", encoding="utf-8") as f:
                return f.read().strip()
