"""
Permutation equivariant training losses and time sampling.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch

from .assignment import PermutationAssignment, euclidean_assign, pit_assign, pit_from_velocity
from .flowpath import FlowPair, VelocityFn, interpolate_stacks
from .geometry import DTYPE
from ..utils.config import LOSS_KINDS, WEIGHTING_KINDS
from ..utils.exceptions import ValidationError
from ..utils.validation import InputValidator


@dataclass(frozen=True)
class TimeWeighting:
    """
    lambda_t realized as a sampling rule.

    half_delta: t=0 w.p. 1/2, else U[0,1]
    mostly_uniform: t=0 w.p. p0, else U[0,1]
    snr_uniform: t=0 w.p. p0, else t = (1 + 10^(-r/20))^-1 with r ~ U[r_min, r_max]
    uniform: t ~ U[0,1], no point mass
    """
    kind: str = "mostly_uniform"
    p0: float = 0.01
    r_min: float = -80.0
    r_max: float = 100.0

    def __post_init__(self):
        if self.kind not in WEIGHTING_KINDS:
            raise ValidationError(f"Unknown time weighting {self.kind!r}; choose from {WEIGHTING_KINDS}")
        if not 0.0 < self.p0 < 1.0:
            raise ValidationError(f"p0 must lie in (0, 1), got {self.p0}")
        if not self.r_min < self.r_max:
            raise ValidationError(f"r_min must be below r_max, got [{self.r_min}, {self.r_max}]")

    @property
    def zero_mass(self) -> float:
        """Probability of drawing exactly t = 0"""
        if self.kind == "half_delta":
            return 0.5
        if self.kind == "uniform":
            return 0.0
        return self.p0


def time_from_snr(r):
    """t = (1 + 10^(-r/20))^-1 so that 20 log10(t / (1 - t)) = r"""
    return 1.0 / (1.0 + 10.0 ** (-r / 20.0))


def sample_times(weighting: TimeWeighting, n: int, generator: torch.Generator) -> torch.Tensor:
    """Draw n times in [0, 1] following the weighting"""
    at_zero = torch.rand(n, generator=generator, dtype=DTYPE) < weighting.zero_mass
    u = torch.rand(n, generator=generator, dtype=DTYPE)
    if weighting.kind == "snr_uniform":
        t = time_from_snr(weighting.r_min + (weighting.r_max - weighting.r_min) * u)
    else:
        t = u
    return torch.where(at_zero, torch.zeros_like(t), t)


def sample_time(weighting: TimeWeighting, generator: torch.Generator) -> float:
    return float(sample_times(weighting, 1, generator)[0])


@dataclass
class LossCounters:
    """Degenerate samples skipped (x1 = x0) and dB floor clamp events"""
    skipped: int = 0
    clamped: int = 0

    def reset(self):
        self.skipped = 0
        self.clamped = 0


def _sq_norm(x: torch.Tensor) -> torch.Tensor:
    return (x * x).flatten(1).sum(dim=1)


def batch_losses(model: VelocityFn, x0: torch.Tensor, x1p: torch.Tensor, x1: torch.Tensor,
                 cond: torch.Tensor, t: torch.Tensor, kind: str = "db",
                 permuted_denominator: bool = False, db_floor: float = 1e-12,
                 counters: Optional[LossCounters] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Per-example losses for a batch whose x1 rows are already permuted

    Args:
        model: wrapped drift
        x0, x1p: (N, K, L) noised mixtures and permuted sources
        x1: (N, K, L) unpermuted sources, used for the normalizing denominator
        cond: (N, L) mixture averages
        t: (N,) times

    Returns:
        (values, valid) where values is (N,) and valid marks non-degenerate samples
    """
    if kind not in LOSS_KINDS:
        raise ValidationError(f"Unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
    target = x1p - x0
    v = model(t, interpolate_stacks(x0, x1p, t), cond)
    raw = _sq_norm(v - target)
    valid = torch.ones_like(raw, dtype=torch.bool)
    if kind == "raw":
        return raw, valid

    with torch.no_grad():
        denom = _sq_norm(target if permuted_denominator else x1 - x0).detach()
    valid = denom > 0
    if counters is not None:
        counters.skipped += int((~valid).sum())
    normalized = raw / torch.where(valid, denom, torch.ones_like(denom))
    if kind == "normalized":
        return normalized, valid

    clamp = normalized <= db_floor
    if counters is not None:
        counters.clamped += int((clamp & valid).sum())
    return 10.0 * torch.log10(normalized.clamp_min(db_floor)), valid


def _single(model, pair: FlowPair, perm, t, kind, permuted_denominator=False, db_floor=1e-12,
            counters=None) -> Optional[torch.Tensor]:
    t = InputValidator.validate_time(t)
    perm = InputValidator.validate_permutation(
        perm.perm if isinstance(perm, PermutationAssignment) else perm, pair.k
    )
    x1p = pair.x1[list(perm)]
    values, valid = batch_losses(
        model, pair.x0.unsqueeze(0), x1p.unsqueeze(0), pair.x1.unsqueeze(0),
        pair.cond.mean.unsqueeze(0), torch.tensor([t], dtype=DTYPE), kind,
        permuted_denominator, db_floor, counters,
    )
    if not bool(valid[0]):
        return None
    return values[0]


def loss_raw(model: VelocityFn, pair: FlowPair, perm, t: float) -> torch.Tensor:
    """||v(t, x_t(x0, pi x1), s_bar) - (pi x1 - x0)||^2 summed over all K L entries"""
    return _single(model, pair, perm, t, "raw")


def loss_normalized(model: VelocityFn, pair: FlowPair, perm, t: float, permuted_denominator: bool = False,
                    counters: Optional[LossCounters] = None) -> Optional[torch.Tensor]:
    """Raw loss over ||x1 - x0||^2; None (and a skip count) when x1 = x0"""
    return _single(model, pair, perm, t, "normalized", permuted_denominator, counters=counters)


def loss_db(model: VelocityFn, pair: FlowPair, perm, t: float, permuted_denominator: bool = False,
            db_floor: float = 1e-12, counters: Optional[LossCounters] = None) -> Optional[torch.Tensor]:
    """10 log10 of the normalized loss, clamped at 10 log10(db_floor)"""
    return _single(model, pair, perm, t, "db", permuted_denominator, db_floor, counters)


class PETLoss:
    """Configured loss: kind, time weighting, assignment rule and counters"""

    def __init__(self, kind: str = "db", weighting: Optional[TimeWeighting] = None,
                 permuted_denominator: bool = False, db_floor: float = 1e-12,
                 pit_max: int = 4, assignment: str = "pit"):
        if kind not in LOSS_KINDS:
            raise ValidationError(f"Unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
        if assignment not in ("pit", "euclidean"):
            raise ValidationError(f"Per-example assignment must be 'pit' or 'euclidean', got {assignment!r}")
        self.kind = kind
        self.weighting = weighting or TimeWeighting()
        self.permuted_denominator = permuted_denominator
        self.db_floor = db_floor
        self.pit_max = pit_max
        self.assignment = assignment
        self.counters = LossCounters()

    @classmethod
    def from_config(cls, loss_config, assignment: str = "pit") -> "PETLoss":
        weighting = TimeWeighting(
            kind=loss_config.time_weighting, p0=loss_config.p0,
            r_min=loss_config.r_min, r_max=loss_config.r_max,
        )
        return cls(
            kind=loss_config.kind, weighting=weighting,
            permuted_denominator=loss_config.permuted_denominator,
            db_floor=loss_config.db_floor, pit_max=loss_config.pit_max,
            assignment="euclidean" if assignment == "euclidean" else "pit",
        )

    def value(self, model: VelocityFn, pair: FlowPair, perm, t: float) -> Optional[torch.Tensor]:
        return _single(model, pair, perm, t, self.kind, self.permuted_denominator, self.db_floor, self.counters)

    def assign(self, model: VelocityFn, pair: FlowPair) -> PermutationAssignment:
        if self.assignment == "euclidean":
            return euclidean_assign(pair.x0, pair.x1)
        return pit_assign(model, pair, self.pit_max)

    def step(self, model: VelocityFn, pair: FlowPair, generator: Optional[torch.Generator] = None,
             t: Optional[float] = None) -> Optional[torch.Tensor]:
        """pet_step: fix the permutation at t=0, then evaluate the loss at a sampled t"""
        perm = self.assign(model, pair)
        if t is None:
            t = sample_time(self.weighting, generator)
        return self.value(model, pair, perm, t)

    def batch(self, model: VelocityFn, pairs: Sequence[FlowPair], times: torch.Tensor,
              perms: Optional[List[PermutationAssignment]] = None
              ) -> Tuple[Optional[torch.Tensor], List[PermutationAssignment]]:
        """
        Mean of step() over a batch with one forward pass per stage

        Returns:
            (mean loss over valid examples or None, permutations used)
        """
        x0 = torch.stack([p.x0 for p in pairs])
        x1 = torch.stack([p.x1 for p in pairs])
        cond = torch.stack([p.cond.mean for p in pairs])

        if perms is None:
            if self.assignment == "euclidean":
                perms = [euclidean_assign(p.x0, p.x1) for p in pairs]
            else:
                k = pairs[0].k
                if k > self.pit_max:
                    raise ValidationError(f"PIT is limited to K <= {self.pit_max}, got K = {k}")
                with torch.no_grad():
                    v0 = model(torch.zeros(len(pairs), dtype=DTYPE), x0, cond)
                perms = [pit_from_velocity(v0[i], x0[i], x1[i]) for i in range(len(pairs))]

        x1p = torch.stack([perm.apply(p.x1) for perm, p in zip(perms, pairs)])
        values, valid = batch_losses(
            model, x0, x1p, x1, cond, times, self.kind,
            self.permuted_denominator, self.db_floor, self.counters,
        )
        if not bool(valid.any()):
            return None, perms
        # Fixed-order reduction over the valid examples.
        return values[valid].sum() / valid.sum(), perms


def pet_step(model: VelocityFn, pair: FlowPair, weighting: TimeWeighting, generator: torch.Generator,
             kind: str = "db", pit_max: int = 4) -> Optional[torch.Tensor]:
    """PIT at t=0 (no gradient through the argmin), then the configured loss at a sampled t"""
    return PETLoss(kind=kind, weighting=weighting, pit_max=pit_max).step(model, pair, generator)
