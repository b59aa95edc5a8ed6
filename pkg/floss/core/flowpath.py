"""
Conditional flow-matching path on the mixture-consistent slice.

x0 = S_bar + P_perp Z fills the zero-sum subspace with shaped noise, the path
is linear between x0 and the sources x1, and the learned drift is wrapped as
v = P_perp v_raw(t, P_perp x_t, s_bar) so that it never leaves the slice.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import torch

from .geometry import DTYPE, MeanStack, SourceStack, project_perp, row_mean_deviation
from .noiseshape import NoiseShaper, apply_shaper
from ..utils.exceptions import NumericalError, ValidationError
from ..utils.validation import InputValidator


# (t: (N,), x: (N, K, L), cond: (N, L)) -> (N, K, L)
VelocityFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]

SLICE_RTOL = 1e-6


def _check_on_slice(x: torch.Tensor, cond: MeanStack, name: str):
    dev = row_mean_deviation(x, cond.mean)
    if dev > SLICE_RTOL:
        raise ValidationError(f"{name} is off the mixture slice (relative row-mean deviation {dev:.3e})")


@dataclass(frozen=True)
class FlowState:
    """(t, x_t) on the slice project_mean(x) = S_bar"""
    t: float
    x: torch.Tensor


@dataclass(frozen=True)
class FlowPair:
    """Noised mixture x0, sources x1, their shared conditioning and the noise draw Z"""
    x0: torch.Tensor
    x1: torch.Tensor
    cond: MeanStack
    z: Optional[torch.Tensor] = None

    def __post_init__(self):
        InputValidator.validate_same_shape(self.x0, self.x1, "x0/x1")
        if tuple(self.x0.shape) != (self.cond.k, self.cond.l):
            raise ValidationError(
                f"FlowPair stacks of shape {tuple(self.x0.shape)} do not match conditioning "
                f"K={self.cond.k}, L={self.cond.l}"
            )
        _check_on_slice(self.x0, self.cond, "x0")
        _check_on_slice(self.x1, self.cond, "x1")

    @property
    def k(self) -> int:
        return self.cond.k

    def permuted(self, perm: Sequence[int]) -> "FlowPair":
        """The same pair with the source rows of x1 reordered: (pi x1)[a] = x1[perm[a]]"""
        perm = InputValidator.validate_permutation(perm, self.k)
        return FlowPair(x0=self.x0, x1=self.x1[list(perm)], cond=self.cond, z=self.z)


def draw_noise(cond: MeanStack, shaper: NoiseShaper, generator: torch.Generator) -> torch.Tensor:
    """Shaped noise Z = Z_white T(s_bar) with Z_white i.i.d. standard normal"""
    if shaper.length != cond.l:
        raise ValidationError(f"Noise shaper length {shaper.length} does not match mixture length {cond.l}")
    z_white = torch.randn((cond.k, cond.l), generator=generator, dtype=DTYPE)
    return apply_shaper(shaper, z_white)


def make_x0(cond: MeanStack, shaper: NoiseShaper, generator: Optional[torch.Generator] = None,
            z: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Initial state x0 = S_bar + P_perp Z

    Args:
        cond: mixture average
        shaper: noise shaper built for this mixture
        generator: random state used when `z` is not given
        z: an already realized shaped noise draw

    Returns:
        K x L stack whose rows average to s_bar
    """
    if z is None:
        if generator is None:
            raise ValidationError("make_x0 needs either a generator or a noise draw")
        z = draw_noise(cond, shaper, generator)
    return cond.data + project_perp(z)


def make_pair(sources: Union[SourceStack, torch.Tensor], shaper: NoiseShaper,
              generator: torch.Generator) -> FlowPair:
    """Draw Z once and keep it with the pair so every later evaluation reuses it"""
    s = sources if isinstance(sources, SourceStack) else SourceStack(sources)
    cond = MeanStack.from_sources(s)
    z = draw_noise(cond, shaper, generator)
    return FlowPair(x0=make_x0(cond, shaper, z=z), x1=s.data, cond=cond, z=z)


def interpolate_stacks(x0: torch.Tensor, x1: torch.Tensor, t) -> torch.Tensor:
    """t x1 + (1 - t) x0 with t a scalar or one value per leading batch entry"""
    t = torch.as_tensor(t, dtype=x0.dtype)
    if t.dim() > 0:
        t = t.reshape(t.shape + (1,) * (x0.dim() - t.dim()))
    return t * x1 + (1 - t) * x0


def interpolate(pair: FlowPair, t: float) -> FlowState:
    t = InputValidator.validate_time(t)
    return FlowState(t=t, x=interpolate_stacks(pair.x0, pair.x1, t))


def target(pair: FlowPair) -> torch.Tensor:
    """Regression target x1 - x0 (= P_perp(S - Z))"""
    return pair.x1 - pair.x0


class WrappedDrift:
    """Batched drift v = P_perp v_raw(t, P_perp x, s_bar)"""

    def __init__(self, raw_net: VelocityFn):
        self.raw_net = raw_net

    def __call__(self, t: torch.Tensor, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        raw = self.raw_net(t, project_perp(x), cond)
        if raw.shape != x.shape:
            raise ValidationError(f"Velocity network returned shape {tuple(raw.shape)}, expected {tuple(x.shape)}")
        if not bool(torch.isfinite(raw).all()):
            raise NumericalError("Velocity network produced non-finite output (training divergence)")
        return project_perp(raw)


def wrap_drift(raw_net: VelocityFn, state: FlowState, cond: MeanStack) -> torch.Tensor:
    """Single-example drift at a FlowState; the result has zero column sums"""
    t = torch.tensor([state.t], dtype=DTYPE)
    out = WrappedDrift(raw_net)(t, state.x.unsqueeze(0), cond.mean.unsqueeze(0))
    return out[0]
