"""
Mixture-driven noise shaping: energy envelope, active power, and the shapers
used to scale white noise before it fills the zero-sum subspace.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from scipy import signal as sps

from .geometry import DTYPE
from ..utils.config import NOISE_KINDS
from ..utils.exceptions import ValidationError


THRESHOLD_FLOOR = 1e-8


@dataclass(frozen=True)
class Envelope:
    """Smoothed power of a signal, same length as the signal"""
    values: np.ndarray
    window_len: int
    threshold: float

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValidationError("Envelope values must be nonnegative")


def window_len_from_ms(window_ms: float, sample_rate: int) -> int:
    """Odd Hamming length closest below window_ms (64 ms at 16 kHz -> 1023)"""
    n = int(round(window_ms * sample_rate / 1000.0))
    if n % 2 == 0:
        n -= 1
    return max(n, 3)


def envelope(mix, window_len: int = 1023, threshold: Optional[float] = None,
             threshold_db: float = -40.0) -> Envelope:
    """
    Energy envelope: squared samples convolved with a unit-sum Hamming window

    Args:
        mix: 1-D signal
        window_len: odd filter length, at least 3
        threshold: minimum-energy floor in power units; defaults to
            `threshold_db` below the envelope maximum, floored at 1e-8

    Returns:
        Envelope with the same length as `mix`
    """
    x = np.asarray(mix.detach().cpu() if isinstance(mix, torch.Tensor) else mix, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"Envelope expects a 1-D signal, got shape {x.shape}")
    if window_len < 3 or window_len % 2 == 0:
        raise ValidationError(f"Envelope window length must be odd and >= 3, got {window_len}")
    if window_len > x.shape[0]:
        raise ValidationError(f"Envelope window length {window_len} exceeds signal length {x.shape[0]}")

    window = sps.windows.hamming(window_len, sym=True)
    window /= window.sum()
    # Direct convolution keeps exact zeros where the window only sees silence.
    values = sps.convolve(x * x, window, mode="same", method="direct")

    if threshold is None:
        peak = float(values.max()) if values.size else 0.0
        threshold = max(peak * 10.0 ** (threshold_db / 10.0), THRESHOLD_FLOOR)

    return Envelope(values=values, window_len=window_len, threshold=float(threshold))


def active_power(env: Envelope) -> float:
    """Amplitude sqrt(mean(env)) over samples above the threshold; 0 if none"""
    active = env.values[env.values > env.threshold]
    if active.size == 0:
        return 0.0
    return float(np.sqrt(active.mean()))


@dataclass(frozen=True)
class NoiseShaper:
    """The operator T(s_bar) applied to white noise"""
    kind: str
    length: int
    sigma0: float = 1.0
    sigma_act: float = 0.0
    env: Optional[Envelope] = None

    def __post_init__(self):
        if self.kind == "constant" and self.sigma0 <= 0:
            raise ValidationError(f"Constant shaper needs sigma0 > 0, got {self.sigma0}")
        if self.kind == "active_power" and self.sigma_act < 0:
            raise ValidationError(f"Active-power shaper needs sigma_act >= 0, got {self.sigma_act}")
        if self.kind == "envelope" and self.env is None:
            raise ValidationError("Envelope shaper needs an envelope")
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"Unknown noise shaper kind {self.kind!r}")

    @classmethod
    def constant(cls, length: int, sigma0: float = 1.0) -> "NoiseShaper":
        return cls(kind="constant", length=length, sigma0=sigma0)

    @classmethod
    def from_mean(cls, kind: str, mean_signal, sample_rate: int, sigma0: float = 1.0,
                  env_window_ms: float = 64.0, env_threshold_db: float = -40.0) -> "NoiseShaper":
        """Build a shaper from the mixture average s_bar"""
        length = int(torch.as_tensor(mean_signal).shape[-1])
        if kind == "constant":
            return cls.constant(length, sigma0)
        window_len = min(window_len_from_ms(env_window_ms, sample_rate), length - (1 - length % 2))
        env = envelope(mean_signal, window_len, threshold_db=env_threshold_db)
        if kind == "active_power":
            return cls(kind=kind, length=length, sigma_act=active_power(env), env=env)
        return cls(kind=kind, length=length, env=env)

    def scale(self) -> torch.Tensor:
        """Per-sample standard deviation of the shaped noise (length L)"""
        if self.kind == "constant":
            return torch.full((self.length,), float(self.sigma0), dtype=DTYPE)
        if self.kind == "active_power":
            return torch.full((self.length,), float(self.sigma_act), dtype=DTYPE)
        return torch.from_numpy(np.sqrt(self.env.values)).to(DTYPE)


def apply_shaper(shaper: NoiseShaper, z_white: torch.Tensor) -> torch.Tensor:
    """Z = Z_white T(s_bar): scale every column n of a K x L draw"""
    if z_white.shape[-1] != shaper.length:
        raise ValidationError(
            f"Noise of shape {tuple(z_white.shape)} does not match shaper length {shaper.length}"
        )
    return z_white * shaper.scale()
