"""
Tensor plumbing on top of torch autograd: shape contracts, finiteness guards,
axis-explicit convolutions over (batch, source, time, band, feature) tensors,
attention, finite-difference gradient checks, determinism and checkpoints.
"""

import json
import math
import os
import random
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange
from loguru import logger
from torch.func import functional_call

from ..core.geometry import DTYPE
from ..utils.exceptions import CheckpointError, NumericalError, ValidationError


CHECKPOINT_MAGIC = b"FLOSSCKP"
CHECKPOINT_VERSION = 1


def expect_shape(x: torch.Tensor, shape: Sequence[Optional[int]], name: str = "tensor") -> torch.Tensor:
    """Check x against a shape pattern where None matches any size"""
    if x.dim() != len(shape) or any(s is not None and s != d for s, d in zip(shape, x.shape)):
        pattern = tuple("*" if s is None else s for s in shape)
        raise ValidationError(f"{name} has shape {tuple(x.shape)}, expected {pattern}")
    return x


def assert_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NumericalError(f"Non-finite activations in {where}")
    return x


def swish(x: torch.Tensor) -> torch.Tensor:
    return F.silu(x)


def time_conv(conv: nn.Conv1d, h: torch.Tensor) -> torch.Tensor:
    """Convolve along time: (N, S, T, B, C) -> (N, S, T, B, C')"""
    n, s, _, b, _ = h.shape
    y = conv(rearrange(h, "n s t b c -> (n s b) c t"))
    return rearrange(y, "(n s b) c t -> n s t b c", n=n, s=s, b=b)


def band_conv(conv: nn.Conv1d, h: torch.Tensor) -> torch.Tensor:
    """Convolve along bands: (N, S, T, B, C) -> (N, S, T, B, C')"""
    n, s, t, _, _ = h.shape
    y = conv(rearrange(h, "n s t b c -> (n s t) c b"))
    return rearrange(y, "(n s t) c b -> n s t b c", n=n, s=s, t=t)


def time_band_conv(conv: nn.Conv2d, h: torch.Tensor) -> torch.Tensor:
    """Convolve over (time, band): (N, S, T, B, C) -> (N, S, T, B, C')"""
    n, s = h.shape[:2]
    y = conv(rearrange(h, "n s t b c -> (n s) c t b"))
    return rearrange(y, "(n s) c t b -> n s t b c", n=n, s=s)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                         return_weights: bool = False):
    """
    softmax(q k^T / sqrt(d)) v over the token axis (-2)

    Args:
        q, k, v: (..., n_tokens, d)

    Returns:
        (..., n_tokens, d), plus the (..., n_tokens, n_tokens) weights if requested
    """
    if q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise ValidationError(
            f"Attention shapes do not match: q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}"
        )
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


def grad_check(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, h: float = 1e-5,
               max_coords: Optional[int] = None, seed: int = 0) -> float:
    """
    Max relative error between autograd and central differences

    Args:
        f: scalar-valued function of x
        x: point of evaluation (not modified)
        h: finite-difference step
        max_coords: check a seeded random subset of coordinates

    Returns:
        max over checked coordinates of |a - n| / max(|a|, |n|, 1e-6)
    """
    x = x.detach().clone().to(DTYPE)
    xg = x.clone().requires_grad_(True)
    out = f(xg)
    if out.numel() != 1:
        raise ValidationError(f"grad_check needs a scalar function, got output shape {tuple(out.shape)}")
    (analytic,) = torch.autograd.grad(out, xg, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x)
    analytic = analytic.reshape(-1)

    coords = np.arange(x.numel())
    if max_coords is not None and max_coords < coords.size:
        coords = np.random.default_rng(seed).choice(coords, size=max_coords, replace=False)

    flat = x.reshape(-1)
    worst = 0.0
    with torch.no_grad():
        for i in coords:
            plus = flat.clone()
            plus[i] += h
            minus = flat.clone()
            minus[i] -= h
            numeric = (float(f(plus.reshape(x.shape))) - float(f(minus.reshape(x.shape)))) / (2 * h)
            a = float(analytic[i])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    return worst


def grad_check_parameter(module: nn.Module, name: str, loss_fn: Callable[[nn.Module, Dict], torch.Tensor],
                         h: float = 1e-5, max_coords: Optional[int] = 20, seed: int = 0) -> float:
    """
    grad_check with respect to one named parameter of a module

    `loss_fn(module, overrides)` must evaluate the module with
    torch.func.functional_call(module, overrides, ...) and return a scalar.
    """
    params = dict(module.named_parameters())
    if name not in params:
        raise ValidationError(f"Unknown parameter {name!r}")
    return grad_check(lambda p: loss_fn(module, {name: p}), params[name], h=h, max_coords=max_coords, seed=seed)


def call_with(module: nn.Module, overrides: Dict[str, torch.Tensor], *args, **kwargs):
    return functional_call(module, overrides, args, kwargs, strict=False)


def seed_everything(seed: int, deterministic: bool = True):
    """Seed python, numpy and torch and request deterministic kernels"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)


def set_threads(n: int):
    if n < 1:
        raise ValidationError(f"Thread count must be positive, got {n}")
    torch.set_num_threads(n)


@dataclass
class Checkpoint:
    """Named parameter tensors, their EMA shadows and JSON metadata"""
    meta: Dict
    params: Dict[str, torch.Tensor]
    ema: Dict[str, torch.Tensor] = field(default_factory=dict)


def save_checkpoint(path: str, checkpoint: Checkpoint):
    """
    Write a checkpoint

    Layout (little-endian): magic "FLOSSCKP" | u32 version | u32 meta_len |
    JSON meta | u32 n_tensors | per tensor: u16 name_len, name, u8 ndim,
    u64 dims[ndim], f64 values.
    """
    meta = json.dumps(checkpoint.meta, sort_keys=True).encode("utf-8")
    named = [(f"params/{k}", v) for k, v in checkpoint.params.items()]
    named += [(f"ema/{k}", v) for k, v in checkpoint.ema.items()]

    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta,
              struct.pack("<I", len(named))]
    for name, tensor in named:
        raw = name.encode("utf-8")
        values = tensor.detach().cpu().to(DTYPE).contiguous().numpy()
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", values.ndim) + struct.pack(f"<{values.ndim}Q", *values.shape))
        chunks.append(values.astype("<f8").tobytes())

    out_dir = os.path.dirname(path)
    try:
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"Failed to write checkpoint {path}: {e}")
    logger.info(f"Saved checkpoint {path} ({len(named)} tensors)")


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"Checkpoint {self.path} is truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise CheckpointError(f"Failed to read checkpoint {path}: {e}")

    reader = _Reader(data, path)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a FLOSS checkpoint (bad magic)")
    version, meta_len = reader.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} in {path}")
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint metadata in {path}: {e}")

    (n_tensors,) = reader.unpack("<I")
    params, ema = {}, {}
    for _ in range(n_tensors):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"Corrupt tensor name in {path}: {e}")
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(dims)
        tensor = torch.from_numpy(values.astype(np.float64))
        prefix, _, key = name.partition("/")
        if prefix == "params":
            params[key] = tensor
        elif prefix == "ema":
            ema[key] = tensor
        else:
            raise CheckpointError(f"Unknown tensor group {prefix!r} in {path}")
    if reader.pos != len(data):
        raise CheckpointError(f"Checkpoint {path} has {len(data) - reader.pos} trailing bytes")
    return Checkpoint(meta=meta, params=params, ema=ema)
