"""
Permutation-equivariant velocity network.

Sources and the mixture token share every weight; the only cross-source paths
are attention over the source axis, which carries no source positions, so
permuting the input sources permutes the output. A learned marker vector on
the mixture token (always the last token) tells it apart.

Activations are laid out as (N, S, T, B, O): batch, tokens (K sources plus
the mixture), STFT frames, bands, features.
"""

import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
from einops import rearrange
from loguru import logger

from ..audio.dsp import MelSplit, StftConfig, compress, decompress, global_norm, istft, stft
from ..core.geometry import DTYPE
from ..utils.exceptions import ValidationError
from .tensorcore import (
    Checkpoint, assert_finite, band_conv, expect_shape, load_checkpoint,
    scaled_dot_attention, swish, time_band_conv, time_conv,
)


@dataclass
class NetConfig:
    """Network hyperparameters; n_blocks counts (BSJA, TSPA) pairs"""
    n_sources: int = 2
    sample_rate: int = 16000
    frame_ms: float = 20.0
    compress_exponent: float = 0.33
    n_bands: int = 16
    embed_dim: int = 32
    n_heads: int = 4
    n_blocks: int = 2
    norm_groups: int = 4
    mlp_ratio: int = 2
    bsja_kernel: int = 5
    tspa_kernel: Tuple[int, int] = (5, 3)
    mlp_band_kernel: int = 3
    time_embed_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        self.tspa_kernel = tuple(self.tspa_kernel)
        if self.embed_dim % self.n_heads:
            raise ValidationError(f"embed_dim {self.embed_dim} must be divisible by n_heads {self.n_heads}")
        if self.embed_dim % self.norm_groups:
            raise ValidationError(f"embed_dim {self.embed_dim} must be divisible by norm_groups {self.norm_groups}")
        for k in (self.bsja_kernel, self.mlp_band_kernel) + self.tspa_kernel:
            if k < 1 or k % 2 == 0:
                raise ValidationError(f"Convolution kernels must be odd and positive, got {k}")
        if self.n_blocks < 1:
            raise ValidationError(f"n_blocks must be positive, got {self.n_blocks}")

    @classmethod
    def from_config(cls, config) -> "NetConfig":
        m = config.model
        return cls(
            n_sources=config.data.n_sources, sample_rate=config.data.sample_rate,
            frame_ms=m.frame_ms, compress_exponent=m.compress_exponent, n_bands=m.n_bands,
            embed_dim=m.embed_dim, n_heads=m.n_heads, n_blocks=m.n_blocks, norm_groups=m.norm_groups,
            mlp_ratio=m.mlp_ratio, bsja_kernel=m.bsja_kernel, tspa_kernel=tuple(m.tspa_kernel),
            mlp_band_kernel=m.mlp_band_kernel, seed=config.train.seed,
        )

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["tspa_kernel"] = list(self.tspa_kernel)
        return d


def modulate(h: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """h * (1 + scale) + shift with (N, O) modulations broadcast over tokens, time and bands"""
    return h * (1 + scale[:, None, None, None, :]) + shift[:, None, None, None, :]


def hybrid_mask(mapping: torch.Tensor, mask_in: torch.Tensor, mask_mix: torch.Tensor,
                xin_enc: torch.Tensor, cond_enc: torch.Tensor) -> torch.Tensor:
    """mapping + mask_in * xin_enc + mask_mix * cond_enc"""
    return mapping + mask_in * xin_enc + mask_mix * cond_enc


class RMSGroupNorm(nn.Module):
    """RMS normalization within feature groups with a learnable gain and no bias"""

    def __init__(self, dim: int, groups: int, eps: float = 1e-8):
        super().__init__()
        self.groups = groups
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(dim))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        g = h.unflatten(-1, (self.groups, -1))
        rms = ((g * g).mean(dim=-1, keepdim=True) + self.eps).sqrt()
        return (g / rms).flatten(-2) * self.gain


class TimeConditioning(nn.Module):
    """Sinusoidal embedding of t and an MLP giving (scale, shift) for every norm of every block"""

    def __init__(self, embed_dim: int, dim: int, n_layers: int):
        super().__init__()
        self.embed_dim = embed_dim
        self.dim = dim
        self.n_layers = n_layers
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, 4 * dim),
            nn.SiLU(),
            nn.Linear(4 * dim, n_layers * 4 * dim),
        )

    def embed(self, t: torch.Tensor) -> torch.Tensor:
        half = self.embed_dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1))
        args = 1000.0 * t[:, None] * freqs[None, :]
        return torch.cat([args.sin(), args.cos()], dim=-1)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        """(N,) -> (N, n_layers, 4, O): scale1, shift1, scale2, shift2 per block"""
        return self.mlp(self.embed(t)).reshape(t.shape[0], self.n_layers, 4, self.dim)


class ConvSwishGLU(nn.Module):
    """Two parallel convolutions, swish(a) * b, then a convolutional output projection"""

    def __init__(self, dim: int, hidden: int, kernel: int, axis: str):
        super().__init__()
        self.axis = axis
        pad = kernel // 2
        self.gate = nn.Conv1d(dim, hidden, kernel, padding=pad)
        self.value = nn.Conv1d(dim, hidden, kernel, padding=pad)
        self.out = nn.Conv1d(hidden, dim, kernel, padding=pad)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        conv = time_conv if self.axis == "time" else band_conv
        return conv(self.out, swish(conv(self.gate, h)) * conv(self.value, h))


class BSJAttention(nn.Module):
    """Attention over the flattened (band, source) tokens of every frame; time-conv projections"""

    def __init__(self, dim: int, n_heads: int, kernel: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Conv1d(dim, 3 * dim, kernel, padding=kernel // 2)
        self.proj = nn.Linear(dim, dim)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, h: torch.Tensor, return_weights: bool = False):
        s, b = h.shape[1], h.shape[3]
        q, k, v = time_conv(self.qkv, h).chunk(3, dim=-1)
        q, k, v = (rearrange(x, "n s t b (h d) -> n t h (s b) d", h=self.n_heads) for x in (q, k, v))
        out, weights = scaled_dot_attention(q, k, v, return_weights=True)
        out = self.proj(rearrange(out, "n t h (s b) d -> n s t b (h d)", s=s, b=b))
        return (out, weights) if return_weights else out


class TSPAttention(nn.Module):
    """
    Attention over time for every (band, source) with (time, band) conv
    projections, plus a parallel attention across sources; both paths are
    summed before the output projection
    """

    def __init__(self, dim: int, n_heads: int, kernel: Tuple[int, int]):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Conv2d(dim, 3 * dim, kernel, padding=(kernel[0] // 2, kernel[1] // 2))
        self.qkv_src = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, h: torch.Tensor, return_weights: bool = False):
        t, b = h.shape[2], h.shape[3]
        q, k, v = time_band_conv(self.qkv, h).chunk(3, dim=-1)
        q, k, v = (rearrange(x, "n s t b (h d) -> n s b h t d", h=self.n_heads) for x in (q, k, v))
        over_time, weights = scaled_dot_attention(q, k, v, return_weights=True)
        over_time = rearrange(over_time, "n s b h t d -> n s t b (h d)")

        qs, ks, vs = self.qkv_src(h).chunk(3, dim=-1)
        qs, ks, vs = (rearrange(x, "n s t b (h d) -> n t b h s d", h=self.n_heads) for x in (qs, ks, vs))
        over_sources = scaled_dot_attention(qs, ks, vs)
        over_sources = rearrange(over_sources, "n t b h s d -> n s t b (h d)", t=t, b=b)

        out = self.proj(over_time + over_sources)
        return (out, weights) if return_weights else out


class DualPathBlock(nn.Module):
    """norm -> modulate -> attention -> residual, norm -> modulate -> Conv-SwishGLU -> residual"""

    def __init__(self, attention: nn.Module, mlp: ConvSwishGLU, dim: int, groups: int):
        super().__init__()
        self.norm1 = RMSGroupNorm(dim, groups)
        self.attn = attention
        self.norm2 = RMSGroupNorm(dim, groups)
        self.mlp = mlp

    def forward(self, h: torch.Tensor, mod: torch.Tensor) -> torch.Tensor:
        h = h + self.attn(modulate(self.norm1(h), mod[:, 0], mod[:, 1]))
        return h + self.mlp(modulate(self.norm2(h), mod[:, 2], mod[:, 3]))


def bsja_block(cfg: NetConfig) -> DualPathBlock:
    o = cfg.embed_dim
    return DualPathBlock(
        BSJAttention(o, cfg.n_heads, cfg.bsja_kernel),
        ConvSwishGLU(o, cfg.mlp_ratio * o, cfg.bsja_kernel, axis="time"),
        o, cfg.norm_groups,
    )


def tspa_block(cfg: NetConfig) -> DualPathBlock:
    o = cfg.embed_dim
    return DualPathBlock(
        TSPAttention(o, cfg.n_heads, cfg.tspa_kernel),
        ConvSwishGLU(o, cfg.mlp_ratio * o, cfg.mlp_band_kernel, axis="band"),
        o, cfg.norm_groups,
    )


class EqNet(nn.Module):
    """
    Raw velocity network v_raw(t, x, s_bar)

    forward takes t (N,), x (N, K, L) and cond (N, L) and returns (N, K, L).
    Wrap it with flowpath.WrappedDrift to keep the drift on the mixture slice.
    """

    def __init__(self, config: Optional[NetConfig] = None):
        super().__init__()
        self.config = config or NetConfig()
        cfg = self.config
        self.stft_config = StftConfig(cfg.sample_rate, cfg.frame_ms)
        o = cfg.embed_dim

        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.split = MelSplit.mel(cfg.n_bands, self.stft_config.n_freqs, cfg.sample_rate,
                                      n_features=o, exact=False)
            self.encoders = nn.ParameterList([nn.Parameter(w.clone()) for w in self.split.weights])
            self.band_embedding = nn.Parameter(0.02 * torch.randn(cfg.n_bands, o))
            self.mixture_marker = nn.Parameter(torch.randn(o))
            self.time_cond = TimeConditioning(cfg.time_embed_dim, o, 2 * cfg.n_blocks)
            blocks = []
            for _ in range(cfg.n_blocks):
                blocks += [bsja_block(cfg), tspa_block(cfg)]
            self.blocks = nn.ModuleList(blocks)
            self.heads = nn.ModuleList([nn.Linear(o, 3 * 2 * w) for w in self.split.widths])
        self.to(DTYPE)

    @classmethod
    def from_checkpoint(cls, path: str, use_ema: bool = True) -> "EqNet":
        ckpt = load_checkpoint(path)
        model = cls(NetConfig(**ckpt.meta["net_config"]))
        state = ckpt.ema if use_ema and ckpt.ema else ckpt.params
        if use_ema and not ckpt.ema:
            logger.warning(f"No EMA weights in {path}, using raw parameters")
        model.load_state_dict(state)
        return model

    def to_checkpoint(self, ema_state: Optional[Dict[str, torch.Tensor]] = None, **meta) -> Checkpoint:
        return Checkpoint(
            meta={"net_config": self.config.to_dict(), **meta},
            params={k: v.detach().clone() for k, v in self.state_dict().items()},
            ema=dict(ema_state or {}),
        )

    def encode(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(N, S, L) -> compressed spectra (N, S, T, F, 2) and band features (N, S, T, B, O)"""
        spec = compress(torch.view_as_real(stft(x, self.stft_config)), self.config.compress_exponent)
        return spec, self.split.split(spec, list(self.encoders))

    def decode(self, u: torch.Tensor, xin_spec: torch.Tensor, cond_spec: torch.Tensor, length: int) -> torch.Tensor:
        """Hybrid-mask head per band, band merge, decompression and iSTFT"""
        xin_bands = self.split.band_slices(xin_spec)
        cond_bands = self.split.band_slices(cond_spec)
        out = []
        for b, head in enumerate(self.heads):
            mapping, mask_in, mask_mix = head(u[..., b, :]).chunk(3, dim=-1)
            out.append(hybrid_mask(mapping, mask_in, mask_mix, xin_bands[b], cond_bands[b]))
        spec = decompress(MelSplit.merge_bands(out), self.config.compress_exponent)
        return istft(torch.view_as_complex(spec.contiguous()), self.stft_config, length)

    def embed_tokens(self, xin: torch.Tensor, cond: torch.Tensor):
        tokens = torch.cat([xin, cond.unsqueeze(1)], dim=1)
        spec, feats = self.encode(tokens)
        h, _ = global_norm(feats)
        return spec, h + self.band_embedding

    def marker(self, n_tokens: int) -> torch.Tensor:
        """Mixture marker on the last token only, shaped to add onto (N, S, T, B, O)"""
        onehot = torch.zeros(n_tokens, dtype=self.mixture_marker.dtype)
        onehot[-1] = 1.0
        return onehot[:, None, None, None] * self.mixture_marker

    def forward(self, t: torch.Tensor, xin: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        n, k, length = xin.shape
        expect_shape(t, (n,), "t")
        expect_shape(cond, (n, length), "cond")

        spec, h = self.embed_tokens(xin, cond)
        mods = self.time_cond(t)
        marker = self.marker(k + 1)
        for i, block in enumerate(self.blocks):
            h = block(h + marker, mods[:, i])
            assert_finite(h, f"block {i} ({'BSJA' if i % 2 == 0 else 'TSPA'})")

        out = self.decode(h[:, :k], spec[:, :k], spec[:, k:], length)
        return assert_finite(out, "decoder")

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

