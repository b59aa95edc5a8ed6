"""
Invariant self-test: a quick checklist over the numerical core
"""

import itertools
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Callable, List, Tuple

import torch

from .audio.dsp import SpectralCodec, compress, decompress
from .core.assignment import euclidean_assign, pit_assign
from .core.flowpath import WrappedDrift, make_pair
from .core.geometry import DTYPE, ProjectorK, row_mean_deviation
from .core.losses import loss_db, loss_normalized, loss_raw
from .core.noiseshape import NoiseShaper
from .core.sampler import make_schedule, separate
from .nn.eqnet import EqNet, NetConfig
from .nn.tensorcore import CHECKPOINT_MAGIC, grad_check, load_checkpoint, save_checkpoint
from .utils.exceptions import CheckpointError


TINY = dict(n_bands=4, embed_dim=8, n_heads=2, n_blocks=1, norm_groups=4, time_embed_dim=8)
TINY_LEN = 512


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _randomize(model: torch.nn.Module, seed: int, scale: float = 0.1):
    """Replace every parameter by seeded noise so zero-initialized projections take part"""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))


def tiny_model(seed: int = 0, randomize: bool = True) -> EqNet:
    model = EqNet(NetConfig(seed=seed, **TINY))
    if randomize:
        _randomize(model, seed)
    return model


def check_projectors() -> Tuple[bool, str]:
    g = torch.Generator().manual_seed(0)
    x = torch.randn(3, 64, generator=g, dtype=DTYPE)
    p = ProjectorK(3)
    err = max(
        float((p.mean(x) + p.perp(x) - x).abs().max()),
        float((p.perp(p.perp(x)) - p.perp(x)).abs().max()),
        float(p.mean(p.perp(x)).abs().max()),
    )
    return err <= 1e-12, f"max error {err:.2e}"


def check_equivariance() -> Tuple[bool, str]:
    worst = 0.0
    for k in (2, 3):
        model = tiny_model(k)
        g = torch.Generator().manual_seed(k)
        x = torch.randn(1, k, TINY_LEN, generator=g, dtype=DTYPE)
        cond = torch.randn(1, TINY_LEN, generator=g, dtype=DTYPE)
        t = torch.tensor([0.3], dtype=DTYPE)
        with torch.no_grad():
            base = model(t, x, cond)
            for perm in itertools.permutations(range(k)):
                out = model(t, x[:, list(perm)], cond)
                worst = max(worst, float((out - base[:, list(perm)]).norm() / base.norm()))
    return worst <= 1e-10, f"max relative error {worst:.2e}"


def check_assignment() -> Tuple[bool, str]:
    g = torch.Generator().manual_seed(1)
    zero = WrappedDrift(lambda t, x, c: torch.zeros_like(x))
    mismatches = 0
    for _ in range(20):
        s = torch.randn(3, 128, generator=g, dtype=DTYPE)
        pair = make_pair(s, NoiseShaper.constant(128), g)
        if pit_assign(zero, pair).perm != euclidean_assign(pair.x0, pair.x1).perm:
            mismatches += 1
    return mismatches == 0, f"{mismatches} PIT/Euclidean disagreements under a zero drift"


def check_losses() -> Tuple[bool, str]:
    g = torch.Generator().manual_seed(2)
    model = WrappedDrift(tiny_model(2))
    s = torch.randn(2, TINY_LEN, generator=g, dtype=DTYPE)
    pair = make_pair(s, NoiseShaper.constant(TINY_LEN), g)
    with torch.no_grad():
        raw = float(loss_raw(model, pair, (1, 0), 0.4))
        norm = float(loss_normalized(model, pair, (1, 0), 0.4))
        db = float(loss_db(model, pair, (1, 0), 0.4))
    denom = float(((pair.x1 - pair.x0) ** 2).sum())
    db_err = abs(db - 10 * math.log10(norm))
    raw_err = abs(raw - norm * denom) / raw
    return max(db_err, raw_err) <= 1e-9, f"dB error {db_err:.2e}, raw relative error {raw_err:.2e}"


def check_grad() -> Tuple[bool, str]:
    g = torch.Generator().manual_seed(3)
    x = torch.randn(6, generator=g, dtype=DTYPE)
    quad = grad_check(lambda v: (v * v).sum(), x)
    model = tiny_model(3)
    xin = torch.randn(1, 2, TINY_LEN, generator=g, dtype=DTYPE)
    cond = torch.randn(1, TINY_LEN, generator=g, dtype=DTYPE)
    t = torch.tensor([0.5], dtype=DTYPE)
    net = grad_check(lambda v: (model(t, v, cond) ** 2).sum(), xin, max_coords=8)
    return max(quad, net) <= 1e-4, f"quadratic {quad:.2e}, network input {net:.2e}"


def check_codec() -> Tuple[bool, str]:
    g = torch.Generator().manual_seed(4)
    codec = SpectralCodec.exact(16000, n_bands=16)
    x = torch.randn(2, 16000, generator=g, dtype=DTYPE)
    rt = float((codec.decode(codec.encode(x), 16000) - x).norm() / x.norm())
    z = torch.randn(64, 2, generator=g, dtype=DTYPE)
    cp = float((decompress(compress(z)) - z).norm() / z.norm())
    return rt <= 1e-5 and cp <= 1e-6, f"codec {rt:.2e}, compression {cp:.2e}"


def check_sampler() -> Tuple[bool, str]:
    g = torch.Generator().manual_seed(5)
    model = tiny_model(5)
    worst = 0.0
    for name in ("linear", "custom5", "single"):
        schedule = make_schedule(name, 5 if name == "linear" else None)
        y = torch.randn(TINY_LEN, generator=g, dtype=DTYPE)
        out = separate(model, y, NoiseShaper.constant(TINY_LEN), schedule, seed=7, k=2)
        worst = max(worst, row_mean_deviation(out.data, y / 2))
    grid = make_schedule("custom5").times
    ok_grid = all(abs(a - b) < 1e-12 for a, b in zip(grid, (0.0, 0.95, 0.99, 0.999, 0.9999, 1.0)))
    return worst <= 1e-6 and ok_grid, f"max row-mean deviation {worst:.2e}"


def check_checkpoint() -> Tuple[bool, str]:
    model = tiny_model(6, randomize=False)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.floss")
        save_checkpoint(path, model.to_checkpoint(model.state_dict(), step=0))
        loaded = EqNet.from_checkpoint(path)
        same = all(torch.equal(a, b) for a, b in zip(model.state_dict().values(), loaded.state_dict().values()))
        with open(path, "r+b") as fh:
            fh.write(b"X" * len(CHECKPOINT_MAGIC))
        try:
            load_checkpoint(path)
            rejected = False
        except CheckpointError:
            rejected = True
    return same and rejected, "round trip exact, corrupted magic rejected"


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("projector algebra", check_projectors),
    ("network equivariance", check_equivariance),
    ("PIT / Euclidean assignment", check_assignment),
    ("loss identities", check_losses),
    ("gradient checks", check_grad),
    ("codec round trip", check_codec),
    ("sampler mixture consistency", check_sampler),
    ("checkpoint format", check_checkpoint),
]


def run_selftest(verbose: bool = True) -> List[CheckResult]:
    """Run every check; an exception inside a check counts as a failure"""
    results = []
    for name, check in CHECKS:
        try:
            passed, detail = check()
        except Exception as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        results.append(CheckResult(name, bool(passed), detail))
        if verbose:
            print(f"{'✅' if passed else '❌'} {name:32} {detail}")
    if verbose:
        failed = sum(not r.passed for r in results)
        print("-" * 50)
        print("✅ All checks passed" if not failed else f"❌ {failed} check(s) failed")
    return results
