"""
WAV reading/writing utilities
"""

import os

import numpy as np
import soundfile as sf
from loguru import logger

from .exceptions import AudioIOError
from .validation import FileValidator


SUBTYPES = {"pcm16": "PCM_16", "float32": "FLOAT"}


class AudioProcessor:
    """Loads and saves mono WAV files at a fixed sample rate"""

    def __init__(self, sample_rate: int, subtype: str = "pcm16"):
        if subtype not in SUBTYPES:
            raise AudioIOError(f"Unsupported WAV subtype {subtype!r}; choose from {sorted(SUBTYPES)}")
        self.sample_rate = sample_rate
        self.subtype = subtype
        self.validator = FileValidator()

    def load_audio(self, path: str) -> np.ndarray:
        """
        Load a mono WAV file as 64-bit floats

        Args:
            path: Path to the WAV file

        Returns:
            1-D float64 array of samples
        """
        self.validator.validate_file(path)
        try:
            data, sr = sf.read(path, dtype="float64", always_2d=True)
        except RuntimeError as e:
            raise AudioIOError(f"Audio loading failed for {path}: {e}")

        if data.shape[1] != 1:
            raise AudioIOError(f"Only mono audio is supported, {path} has {data.shape[1]} channels")
        if sr != self.sample_rate:
            raise AudioIOError(
                f"Sample rate mismatch for {path}: file is {sr} Hz, config expects {self.sample_rate} Hz"
            )

        logger.info(f"Loaded audio: {path}, {data.shape[0]} samples at {sr} Hz")
        return data[:, 0]

    def save_audio(self, path: str, signal: np.ndarray):
        """
        Write a mono signal, clipping to [-1, 1] for PCM output

        Args:
            path: Destination path
            signal: 1-D array of samples
        """
        signal = np.asarray(signal, dtype=np.float64)
        if signal.ndim != 1:
            raise AudioIOError(f"Expected a 1-D signal, got shape {signal.shape}")
        if self.subtype == "pcm16":
            peak = np.max(np.abs(signal)) if signal.size else 0.0
            if peak > 1.0:
                logger.warning(f"Clipping {path}: peak amplitude {peak:.3f} exceeds 1.0")
            signal = np.clip(signal, -1.0, 1.0)

        out_dir = os.path.dirname(path)
        try:
            if out_dir:
                os.makedirs(out_dir, exist_ok=True)
            sf.write(path, signal.astype(np.float32), self.sample_rate, subtype=SUBTYPES[self.subtype])
        except (OSError, RuntimeError) as e:
            raise AudioIOError(f"Audio saving failed for {path}: {e}")

        logger.debug(f"Saved audio: {path}")
