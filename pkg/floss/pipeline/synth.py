"""
Synthetic sources and the mixing protocol used for training and evaluation
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy import signal as sps

from ..core.flowpath import FlowPair, make_pair
from ..core.geometry import DTYPE, MeanStack, SourceStack
from ..core.noiseshape import NoiseShaper, active_power, envelope, window_len_from_ms
from ..utils.config import SYNTH_KINDS
from ..utils.exceptions import DataError, ValidationError


BAND_LOW_HZ = 80.0
BAND_OVERLAP = 0.15
FADE_MS = 10.0


@dataclass(frozen=True)
class SynthSources:
    """K source signals and the frequency band each one was built in"""
    kind: str
    signals: np.ndarray
    bands: Tuple[Tuple[float, float], ...]
    sample_rate: int


def source_bands(n_sources: int, sample_rate: int) -> List[Tuple[float, float]]:
    """Equal-width bands between 80 Hz and 0.45 fs, widened so neighbours overlap"""
    edges = np.linspace(BAND_LOW_HZ, 0.45 * sample_rate, n_sources + 1)
    width = edges[1] - edges[0]
    bands = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        bands.append((max(BAND_LOW_HZ, lo - BAND_OVERLAP * width), min(0.45 * sample_rate, hi + BAND_OVERLAP * width)))
    return bands


def _fade(x: np.ndarray, sample_rate: int) -> np.ndarray:
    n = min(int(FADE_MS * sample_rate / 1000), x.shape[-1] // 2)
    if n < 1:
        return x
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / n)
    x = x.copy()
    x[..., :n] *= ramp
    x[..., -n:] *= ramp[::-1]
    return x


def _sine_chirp(rng, band, t, sample_rate):
    lo, hi = band
    margin = 0.1 * (hi - lo)
    f0, f1 = lo + margin, hi - margin
    if rng.random() < 0.5:
        f0, f1 = f1, f0
    return sps.chirp(t, f0=f0, t1=t[-1], f1=f1, method="linear", phi=rng.uniform(0, 360))


def _filtered_noise(rng, band, t, sample_rate):
    nyq = sample_rate / 2.0
    sos = sps.butter(6, [band[0] / nyq, band[1] / nyq], btype="bandpass", output="sos")
    x = sps.sosfiltfilt(sos, rng.standard_normal(t.shape[0]))
    return x / (np.max(np.abs(x)) + 1e-12)


def _am_tones(rng, band, t, sample_rate, n_tones: int = 3):
    lo, hi = band
    x = np.zeros_like(t)
    for _ in range(n_tones):
        f = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
        fm = rng.uniform(1.0, 6.0)
        depth = rng.uniform(0.3, 1.0)
        x += (1 + depth * np.sin(2 * np.pi * fm * t + rng.uniform(0, 2 * np.pi))) * np.sin(
            2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)
        )
    return x / n_tones


GENERATORS = {"sine_chirp": _sine_chirp, "filtered_noise": _filtered_noise, "am_tones": _am_tones}


def synth_sources(kind: str, seed: int, n_sources: int = 2, length: int = 16000,
                  sample_rate: int = 16000, amplitude: float = 1.0) -> SynthSources:
    """
    Deterministic synthetic sources, source k living in band k of source_bands()

    Args:
        kind: sine_chirp, filtered_noise or am_tones
        seed: random seed; equal seeds give identical signals
        amplitude: peak scale applied to every source

    Returns:
        SynthSources with signals of shape (n_sources, length)
    """
    if kind not in GENERATORS:
        raise ValidationError(f"Unknown source kind {kind!r}; choose from {SYNTH_KINDS}")
    if n_sources < 2 or length < 2:
        raise ValidationError(f"Need at least 2 sources and 2 samples, got {n_sources} x {length}")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate
    bands = source_bands(n_sources, sample_rate)
    signals = np.stack([GENERATORS[kind](rng, band, t, sample_rate) for band in bands])
    signals = amplitude * _fade(signals, sample_rate)
    return SynthSources(kind=kind, signals=signals, bands=tuple(bands), sample_rate=sample_rate)


@dataclass(frozen=True)
class MixSpec:
    """Crop length and the level/SNR ranges used when mixing"""
    crop_seconds: float = 0.5
    level_range: Tuple[float, float] = (-29.0, -19.0)
    snr_range: Tuple[float, float] = (-10.0, 10.0)
    max_retries: int = 10

    def __post_init__(self):
        for name in ("level_range", "snr_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"MixSpec {name} must be ordered, got [{lo}, {hi}]")
        if self.crop_seconds <= 0 or self.max_retries < 1:
            raise ValidationError("MixSpec needs a positive crop length and at least one retry")

    @classmethod
    def from_config(cls, data_config) -> "MixSpec":
        return cls(
            crop_seconds=data_config.crop_seconds,
            level_range=tuple(data_config.level_range),
            snr_range=tuple(data_config.snr_range),
            max_retries=data_config.max_retries,
        )

    def crop_len(self, sample_rate: int) -> int:
        return int(round(self.crop_seconds * sample_rate))


def active_level_db(x: np.ndarray, sample_rate: int, window_ms: float = 64.0) -> float:
    """Active power of a signal in dB re 1.0; -inf for silence"""
    x = np.asarray(x, dtype=np.float64)
    window_len = min(window_len_from_ms(window_ms, sample_rate), x.shape[-1] - (1 - x.shape[-1] % 2))
    sigma = active_power(envelope(x, window_len))
    return 20.0 * np.log10(sigma) if sigma > 0 else -np.inf


def mix_levels(rng: np.random.Generator, spec: MixSpec, n_sources: int) -> np.ndarray:
    """
    Target active levels in dB: source k sits snr_k below source 0, then
    everything is shifted so the loudest source lands on the level draw
    """
    level = rng.uniform(*spec.level_range)
    snrs = rng.uniform(*spec.snr_range, size=n_sources - 1)
    targets = np.concatenate([[0.0], -snrs])
    return targets - targets.max() + level


def make_example(spec: MixSpec, sources, seed: int, sample_rate: int = 16000,
                 shaper_kind: str = "envelope", sigma0: float = 1.0, env_window_ms: float = 64.0,
                 env_threshold_db: float = -40.0) -> FlowPair:
    """
    Crop, level-normalize and mix K sources, then draw the noised mixture x0

    Args:
        spec: crop length and level/SNR ranges
        sources: (K, L_source) array or SynthSources
        seed: drives the crop position, level/SNR draws and the noise draw

    Returns:
        FlowPair with x1 = scaled crops and cond = their mean
    """
    signals = sources.signals if isinstance(sources, SynthSources) else np.asarray(sources, dtype=np.float64)
    k, total = signals.shape
    crop = spec.crop_len(sample_rate)
    if crop > total:
        raise ValidationError(f"Crop of {crop} samples does not fit sources of {total} samples")

    rng = np.random.default_rng(seed)
    for attempt in range(spec.max_retries):
        start = int(rng.integers(0, total - crop + 1))
        segment = signals[:, start:start + crop]
        levels = np.array([active_level_db(s, sample_rate, env_window_ms) for s in segment])
        if np.all(np.isfinite(levels)):
            break
    else:
        raise DataError(f"No active crop found after {spec.max_retries} attempts (seed {seed})")

    targets = mix_levels(rng, spec, k)
    scaled = segment * (10.0 ** ((targets - levels) / 20.0))[:, None]

    stack = SourceStack(torch.from_numpy(scaled).to(DTYPE))
    cond = MeanStack.from_sources(stack)
    shaper = NoiseShaper.from_mean(shaper_kind, cond.mean, sample_rate, sigma0=sigma0,
                                   env_window_ms=env_window_ms, env_threshold_db=env_threshold_db)
    generator = torch.Generator().manual_seed(int(rng.integers(0, 2 ** 62)))
    return make_pair(stack, shaper, generator)


class SyntheticDataset:
    """Endless, index-addressable stream of seeded mixtures"""

    def __init__(self, config, seed: int, kinds: Optional[Sequence[str]] = None):
        self.config = config
        self.seed = seed
        self.kinds = tuple(kinds or config.data.kinds)
        self.spec = MixSpec.from_config(config.data)
        self.sample_rate = config.data.sample_rate
        self.source_len = int(round(config.data.source_seconds * self.sample_rate))

    def example_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.seed, index]).generate_state(1)[0])

    def sources(self, index: int) -> SynthSources:
        seed = self.example_seed(index)
        kind = self.kinds[seed % len(self.kinds)]
        return synth_sources(kind, seed, self.config.data.n_sources, self.source_len, self.sample_rate)

    def example(self, index: int) -> FlowPair:
        noise = self.config.noise
        return make_example(
            self.spec, self.sources(index), self.example_seed(index) + 1, self.sample_rate,
            shaper_kind=noise.kind, sigma0=noise.sigma0,
            env_window_ms=noise.env_window_ms, env_threshold_db=noise.env_threshold_db,
        )

    def batch(self, step: int, batch_size: int) -> Tuple[List[FlowPair], List[int]]:
        """Examples step * batch_size ... (step + 1) * batch_size - 1 and their indices"""
        indices = list(range(step * batch_size, (step + 1) * batch_size))
        return [self.example(i) for i in indices], indices
