"""
Input validation utilities
"""

import os
from typing import Sequence

import numpy as np
import torch

from .exceptions import AudioIOError, ValidationError


class FileValidator:
    """Validates WAV files handed to the separator"""

    allowed_extensions = {"wav"}

    def __init__(self, max_file_size: int = 512 * 1024 * 1024):
        self.max_file_size = max_file_size

    def validate_file(self, path: str) -> bool:
        """
        Validate a WAV file on disk

        Args:
            path: Path to the file

        Returns:
            True if valid, raises AudioIOError if invalid
        """
        if not path:
            raise AudioIOError("No file provided")

        if not os.path.isfile(path):
            raise AudioIOError(f"File not found: {path}")

        if not self._is_allowed_extension(path):
            raise AudioIOError(
                f"File type not allowed. Allowed types: {', '.join(sorted(self.allowed_extensions))}"
            )

        if os.path.getsize(path) > self.max_file_size:
            max_mb = self.max_file_size / (1024 * 1024)
            raise AudioIOError(f"File too large. Maximum size: {max_mb:.1f}MB")

        if not self._has_wave_header(path):
            raise AudioIOError(f"Not a RIFF/WAVE file: {path}")

        return True

    def _is_allowed_extension(self, filename: str) -> bool:
        """Check if file extension is allowed"""
        if "." not in filename:
            return False
        return filename.rsplit(".", 1)[1].lower() in self.allowed_extensions

    @staticmethod
    def _has_wave_header(path: str) -> bool:
        """Check the RIFF....WAVE magic bytes"""
        with open(path, "rb") as f:
            header = f.read(12)
        return len(header) == 12 and header[:4] == b"RIFF" and header[8:12] == b"WAVE"


class InputValidator:
    """Validates tensors and scalar parameters"""

    @staticmethod
    def validate_time(t: float) -> float:
        """Reject t outside [0, 1]"""
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ValidationError(f"Time t must lie in [0, 1], got {t}")
        return t

    @staticmethod
    def validate_finite(x, name: str = "input"):
        """Reject arrays/tensors containing NaN or Inf"""
        if isinstance(x, torch.Tensor):
            ok = bool(torch.isfinite(x).all())
        else:
            ok = bool(np.isfinite(np.asarray(x)).all())
        if not ok:
            raise ValidationError(f"{name} contains non-finite values")
        return x

    @staticmethod
    def validate_stack(x: torch.Tensor, name: str = "stack", min_sources: int = 1) -> torch.Tensor:
        """Check a (..., K, L) source stack"""
        if not isinstance(x, torch.Tensor):
            raise ValidationError(f"{name} must be a torch.Tensor, got {type(x).__name__}")
        if x.dim() < 2:
            raise ValidationError(f"{name} must have shape (..., K, L), got {tuple(x.shape)}")
        if x.shape[-2] < min_sources or x.shape[-1] < 1:
            raise ValidationError(
                f"{name} needs at least {min_sources} source(s) and one sample, got {tuple(x.shape)}"
            )
        return x

    @staticmethod
    def validate_same_shape(a: torch.Tensor, b: torch.Tensor, names: str = "inputs"):
        """Reject mismatched shapes, naming both"""
        if tuple(a.shape) != tuple(b.shape):
            raise ValidationError(f"Shape mismatch for {names}: {tuple(a.shape)} vs {tuple(b.shape)}")

    @staticmethod
    def validate_permutation(perm: Sequence[int], k: int) -> tuple:
        """Check that perm is a bijection on {0..k-1}"""
        perm = tuple(int(p) for p in perm)
        if len(perm) != k or sorted(perm) != list(range(k)):
            raise ValidationError(f"Invalid permutation {perm} for {k} sources")
        return perm
