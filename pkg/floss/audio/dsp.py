"""
Spectral front end: STFT/iSTFT, magnitude compression, Mel band split and
global normalization. Every operation acts on each source independently.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import librosa
import numpy as np
import torch

from ..core.geometry import DTYPE
from ..utils.exceptions import ValidationError


STD_FLOOR = 1e-8
MAG_FLOOR = 1e-24


@dataclass(frozen=True)
class StftConfig:
    """20 ms frames with half overlap and an amplitude-COLA Hamming window"""
    sample_rate: int = 16000
    frame_ms: float = 20.0

    @property
    def frame_len(self) -> int:
        n = int(round(self.sample_rate * self.frame_ms / 1000.0))
        return n + (n % 2)

    @property
    def hop(self) -> int:
        return self.frame_len // 2

    @property
    def n_freqs(self) -> int:
        return self.frame_len // 2 + 1

    def n_frames(self, length: int) -> int:
        return 1 + length // self.hop

    def window(self) -> torch.Tensor:
        # Periodic Hamming frames at 50% overlap sum to 1.08.
        return torch.hamming_window(self.frame_len, periodic=True, dtype=DTYPE) / 1.08


def stft(x: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    """
    Windowed DFT frames of a signal or a batch of signals

    Args:
        x: (..., L) real signals with L >= frame_len

    Returns:
        (..., T, F) complex spectrogram
    """
    length = x.shape[-1]
    if length < cfg.frame_len:
        raise ValidationError(f"STFT needs at least {cfg.frame_len} samples, got {length}")
    lead = x.shape[:-1]
    spec = torch.stft(
        x.reshape(-1, length), n_fft=cfg.frame_len, hop_length=cfg.hop, win_length=cfg.frame_len,
        window=cfg.window(), center=True, pad_mode="constant", return_complex=True,
    )
    return spec.transpose(-1, -2).reshape(lead + spec.shape[-1:] + spec.shape[-2:-1])


def istft(spec: torch.Tensor, cfg: StftConfig, length: int) -> torch.Tensor:
    """Inverse of stft(): (..., T, F) complex -> (..., length) real"""
    lead = spec.shape[:-2]
    flat = spec.reshape((-1,) + spec.shape[-2:]).transpose(-1, -2)
    x = torch.istft(
        flat, n_fft=cfg.frame_len, hop_length=cfg.hop, win_length=cfg.frame_len,
        window=cfg.window(), center=True, length=length,
    )
    return x.reshape(lead + (length,))


def _power(z: torch.Tensor, exponent: float) -> torch.Tensor:
    """|z|^exponent * e^{i arg z} on a real (..., 2) view"""
    sq = (z * z).sum(dim=-1, keepdim=True).clamp_min(MAG_FLOOR)
    return z * sq ** ((exponent - 1.0) / 2.0)


def compress(z: torch.Tensor, exponent: float = 0.33) -> torch.Tensor:
    """
    Magnitude compression |z|^p e^{i arg z}

    Accepts complex tensors or real views with a trailing (re, im) axis and
    returns the same kind. Zero maps to zero.
    """
    if torch.is_complex(z):
        return torch.view_as_complex(_power(torch.view_as_real(z), exponent).contiguous())
    return _power(z, exponent)


def decompress(z: torch.Tensor, exponent: float = 0.33) -> torch.Tensor:
    """Exact inverse of compress() with the same exponent"""
    return compress(z, 1.0 / exponent)


def mel_band_edges(n_bands: int, n_freqs: int, sample_rate: int) -> Tuple[int, ...]:
    """
    Contiguous bin ranges equally spaced on the Mel scale

    Returns:
        n_bands + 1 strictly increasing edges from 0 to n_freqs; band b covers
        bins [edges[b], edges[b + 1])
    """
    if not 1 <= n_bands <= n_freqs:
        raise ValidationError(f"Cannot split {n_freqs} bins into {n_bands} bands")
    mels = np.linspace(librosa.hz_to_mel(0.0), librosa.hz_to_mel(sample_rate / 2.0), n_bands + 1)
    hz = librosa.mel_to_hz(mels)
    edges = np.round(hz / (sample_rate / 2.0) * (n_freqs - 1)).astype(int)
    edges[0], edges[-1] = 0, n_freqs
    for b in range(1, n_bands + 1):
        edges[b] = max(edges[b], edges[b - 1] + 1)
    for b in range(n_bands - 1, 0, -1):
        edges[b] = min(edges[b], edges[b + 1] - 1)
    return tuple(int(e) for e in edges)


def band_basis(width: int) -> np.ndarray:
    """
    Orthonormal 2w x 2w basis whose first two columns are the triangular Mel
    weights applied to the real and imaginary parts of the band's bins
    """
    tri = np.bartlett(width + 2)[1:-1] if width > 1 else np.ones(1)
    tri_re = np.kron(tri, [1.0, 0.0])
    tri_im = np.kron(tri, [0.0, 1.0])
    stacked = np.column_stack([tri_re, tri_im, np.eye(2 * width)])
    q, _ = np.linalg.qr(stacked)
    return q[:, : 2 * width]


@dataclass
class MelSplit:
    """Per-band linear projections between (bins x re/im) and O features"""
    edges: Tuple[int, ...]
    weights: List[torch.Tensor]
    n_features: int
    exact: bool = field(default=False)

    def __post_init__(self):
        edges = self.edges
        if edges[0] != 0 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValidationError(f"Band edges must start at 0 and increase strictly, got {edges}")
        if len(self.weights) != self.n_bands:
            raise ValidationError(f"Expected {self.n_bands} band projections, got {len(self.weights)}")
        for b, w in enumerate(self.weights):
            expected = (self.n_features, 2 * self.widths[b])
            if tuple(w.shape) != expected:
                raise ValidationError(f"Band {b} projection has shape {tuple(w.shape)}, expected {expected}")

    @classmethod
    def mel(cls, n_bands: int, n_freqs: int, sample_rate: int, n_features: Optional[int] = None,
            exact: bool = True) -> "MelSplit":
        """
        Fixed triangular-Mel projections completed to an orthonormal basis

        Args:
            n_features: O; defaults to twice the widest band
            exact: require unsplit(split(x)) = x, which needs O >= 2 * widest band
        """
        edges = mel_band_edges(n_bands, n_freqs, sample_rate)
        widths = [b - a for a, b in zip(edges, edges[1:])]
        widest = max(widths)
        n_features = 2 * widest if n_features is None else n_features
        if exact and n_features < 2 * widest:
            raise ValidationError(
                f"Exact band split needs O >= {2 * widest} (widest band has {widest} bins), got O = {n_features}"
            )
        weights = []
        for w in widths:
            q = band_basis(w).T[:n_features]
            proj = np.zeros((n_features, 2 * w))
            proj[: q.shape[0]] = q
            weights.append(torch.from_numpy(proj).to(DTYPE))
        return cls(edges=edges, weights=weights, n_features=n_features, exact=exact)

    @property
    def n_bands(self) -> int:
        return len(self.edges) - 1

    @property
    def n_freqs(self) -> int:
        return self.edges[-1]

    @property
    def widths(self) -> List[int]:
        return [b - a for a, b in zip(self.edges, self.edges[1:])]

    def band_slices(self, spec: torch.Tensor) -> List[torch.Tensor]:
        """(..., T, F, 2) -> per band (..., T, 2 w_b), bins interleaved as (re, im)"""
        if spec.shape[-2] != self.n_freqs or spec.shape[-1] != 2:
            raise ValidationError(
                f"Band split covers {self.n_freqs} bins, got spectrogram view of shape {tuple(spec.shape)}"
            )
        return [spec[..., a:b, :].flatten(-2) for a, b in zip(self.edges, self.edges[1:])]

    def split(self, spec: torch.Tensor, weights: Optional[Sequence[torch.Tensor]] = None) -> torch.Tensor:
        """(..., T, F, 2) -> (..., T, B, O)"""
        weights = self.weights if weights is None else weights
        bands = self.band_slices(spec)
        return torch.stack([band @ w.T for band, w in zip(bands, weights)], dim=-2)

    def unsplit(self, features: torch.Tensor, weights: Optional[Sequence[torch.Tensor]] = None) -> torch.Tensor:
        """(..., T, B, O) -> (..., T, F, 2) with the transposed projections"""
        weights = self.weights if weights is None else weights
        if features.shape[-2:] != (self.n_bands, self.n_features):
            raise ValidationError(
                f"Expected features (..., T, {self.n_bands}, {self.n_features}), got {tuple(features.shape)}"
            )
        bands = [features[..., b, :] @ w for b, w in enumerate(weights)]
        return self.merge_bands(bands)

    @staticmethod
    def merge_bands(bands: Sequence[torch.Tensor]) -> torch.Tensor:
        """Per band (..., T, 2 w_b) -> (..., T, F, 2)"""
        parts = [band.unflatten(-1, (-1, 2)) for band in bands]
        return torch.cat(parts, dim=-2)


@dataclass(frozen=True)
class NormStats:
    mean: torch.Tensor
    std: torch.Tensor


def global_norm(features: torch.Tensor, n_axes: int = 3) -> Tuple[torch.Tensor, NormStats]:
    """
    Zero mean, unit std over the trailing `n_axes` axes

    Leading axes (batch, source) are normalized independently, so a source
    permutation permutes the output. A std below 1e-8 is replaced by 1.
    """
    dims = tuple(range(-n_axes, 0))
    mean = features.mean(dim=dims, keepdim=True)
    centered = features - mean
    var = (centered * centered).mean(dim=dims, keepdim=True)
    std = var.clamp_min(STD_FLOOR * STD_FLOOR).sqrt()
    std = torch.where(std <= STD_FLOOR, torch.ones_like(std), std)
    return centered / std, NormStats(mean=mean, std=std)


def global_denorm(features: torch.Tensor, stats: NormStats) -> torch.Tensor:
    return features * stats.std + stats.mean


class SpectralCodec:
    """encode = stft -> compress -> band split; decode is the inverse chain"""

    def __init__(self, stft_config: StftConfig, split: MelSplit, exponent: float = 0.33):
        if split.n_freqs != stft_config.n_freqs:
            raise ValidationError(
                f"Band split covers {split.n_freqs} bins but the STFT has {stft_config.n_freqs}"
            )
        self.stft_config = stft_config
        self.split = split
        self.exponent = exponent

    @classmethod
    def exact(cls, sample_rate: int = 16000, n_bands: int = 16, frame_ms: float = 20.0,
              exponent: float = 0.33) -> "SpectralCodec":
        cfg = StftConfig(sample_rate, frame_ms)
        return cls(cfg, MelSplit.mel(n_bands, cfg.n_freqs, sample_rate), exponent)

    def to_compressed(self, x: torch.Tensor) -> torch.Tensor:
        """(..., L) -> (..., T, F, 2) compressed real view"""
        return compress(torch.view_as_real(stft(x, self.stft_config)), self.exponent)

    def from_compressed(self, z: torch.Tensor, length: int) -> torch.Tensor:
        spec = torch.view_as_complex(decompress(z, self.exponent).contiguous())
        return istft(spec, self.stft_config, length)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.split.split(self.to_compressed(x))

    def decode(self, features: torch.Tensor, length: int) -> torch.Tensor:
        return self.from_compressed(self.split.unsplit(features), length)
