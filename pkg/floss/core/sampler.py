"""
Euler sampling along the learned flow, time schedules, and file-level separation.
"""

import os
from dataclasses import dataclass
from itertools import accumulate
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from loguru import logger

from .flowpath import VelocityFn, WrappedDrift, draw_noise, make_x0
from .geometry import DTYPE, MeanStack, SourceStack
from .noiseshape import NoiseShaper
from ..utils.audio_io import AudioProcessor
from ..utils.exceptions import AudioIOError, NumericalError, ValidationError


CUSTOM5_STEPS = (0.95, 4e-2, 9e-3, 9e-4, 1e-4)
SCHEDULE_KINDS = ("linear", "custom5", "custom5r", "single")


@dataclass(frozen=True)
class Schedule:
    """Euler step sizes and the time grid they produce, from t=0 to t=1"""
    kind: str
    sizes: Tuple[float, ...]

    def __post_init__(self):
        if not self.sizes or any(dt <= 0 for dt in self.sizes):
            raise ValidationError(f"Schedule steps must be positive, got {self.sizes}")
        if abs(sum(self.sizes) - 1.0) > 1e-12:
            raise ValidationError(f"Schedule steps must sum to 1, got {sum(self.sizes)!r}")

    @property
    def times(self) -> Tuple[float, ...]:
        grid = [0.0] + list(accumulate(self.sizes))
        grid[-1] = 1.0
        return tuple(grid)

    @property
    def nfe(self) -> int:
        return len(self.sizes)

    def __str__(self) -> str:
        return f"linear:{self.nfe}" if self.kind == "linear" else self.kind


def make_schedule(kind: str, n: Optional[int] = None) -> Schedule:
    """
    Build a schedule

    linear(n): n equal steps; custom5: the five listed step sizes, largest first;
    custom5r: the same sizes smallest first; single: one step of size 1.
    """
    if kind == "linear":
        if n is None or n < 1:
            raise ValidationError(f"Linear schedule needs n >= 1, got {n}")
        return Schedule(kind, (1.0 / n,) * n)
    if kind == "custom5":
        return Schedule(kind, CUSTOM5_STEPS)
    if kind == "custom5r":
        return Schedule(kind, tuple(reversed(CUSTOM5_STEPS)))
    if kind == "single":
        return Schedule(kind, (1.0,))
    raise ValidationError(f"Unknown schedule {kind!r}; choose from {SCHEDULE_KINDS}")


def parse_schedule(text: str) -> Schedule:
    """Parse 'linear:N', 'custom5', 'custom5r' or 'single'"""
    kind, _, arg = str(text).strip().partition(":")
    if kind == "linear":
        try:
            n = int(arg)
        except ValueError:
            raise ValidationError(f"Schedule {text!r} must look like 'linear:N'")
        return make_schedule(kind, n)
    if arg:
        raise ValidationError(f"Schedule {kind!r} takes no argument, got {text!r}")
    return make_schedule(kind)


def euler_integrate(drift: VelocityFn, x0: torch.Tensor, cond: torch.Tensor, schedule: Schedule) -> torch.Tensor:
    """
    x <- x + dt v(t, x, cond) over the schedule for a batch of states

    Args:
        drift: wrapped drift taking (N,) times, (N, K, L) states, (N, L) conditioning
        x0: (N, K, L) initial states
        cond: (N, L) mixture averages

    Returns:
        (N, K, L) states at t = 1
    """
    x = x0
    n = x0.shape[0]
    for step, (t, dt) in enumerate(zip(schedule.times[:-1], schedule.sizes)):
        try:
            v = drift(torch.full((n,), t, dtype=DTYPE), x, cond)
        except NumericalError as e:
            logger.error(f"Sampler failed at step {step} (t={t:.6f}): {e}")
            raise NumericalError(f"Non-finite drift at sampler step {step} (t={t:.6f})") from e
        x = x + dt * v
        if not bool(torch.isfinite(x).all()):
            logger.error(f"Sampler state became non-finite at step {step} (t={t:.6f})")
            raise NumericalError(f"Non-finite sampler state at step {step} (t={t:.6f})")
    return x


def separate(model: VelocityFn, mixture, shaper: NoiseShaper, schedule: Schedule, seed: int,
             k: int = 2) -> SourceStack:
    """
    Separate one mixture into k sources

    Args:
        model: raw velocity network; it is wrapped so the drift stays on the slice
        mixture: length-L signal y
        shaper: noise shaper built from y / k
        schedule: Euler schedule
        seed: seed of the initial noise draw

    Returns:
        SourceStack whose rows average to y / k
    """
    cond = MeanStack.from_mixture(mixture, k)
    generator = torch.Generator().manual_seed(int(seed))
    x0 = make_x0(cond, shaper, generator)
    with torch.no_grad():
        x1 = euler_integrate(WrappedDrift(model), x0.unsqueeze(0), cond.mean.unsqueeze(0), schedule)[0]
    return SourceStack(x1)


def separate_many(model: VelocityFn, mixtures: Sequence, shapers: Sequence[NoiseShaper], schedule: Schedule,
                  seeds: Sequence[int], k: int = 2) -> List[SourceStack]:
    """Batched separate(); each mixture keeps its own seeded noise draw"""
    conds = [MeanStack.from_mixture(y, k) for y in mixtures]
    x0 = torch.stack([
        make_x0(c, s, z=draw_noise(c, s, torch.Generator().manual_seed(int(seed))))
        for c, s, seed in zip(conds, shapers, seeds)
    ])
    cond = torch.stack([c.mean for c in conds])
    with torch.no_grad():
        x1 = euler_integrate(WrappedDrift(model), x0, cond, schedule)
    return [SourceStack(x) for x in x1]


class Separator:
    """Separates WAV mixtures with a trained velocity network"""

    def __init__(self, model: VelocityFn, config, schedule: Optional[Schedule] = None):
        self.model = model
        self.config = config
        self.schedule = schedule or parse_schedule(config.sample.schedule)
        self.k = config.data.n_sources
        self.audio = AudioProcessor(config.data.sample_rate, config.sample.wav_subtype)

    @classmethod
    def from_checkpoint(cls, path: str, config, schedule: Optional[Schedule] = None,
                        use_ema: Optional[bool] = None) -> "Separator":
        """Load network weights (EMA by default) from a checkpoint file"""
        from ..nn.eqnet import EqNet

        use_ema = config.sample.use_ema if use_ema is None else use_ema
        model = EqNet.from_checkpoint(path, use_ema=use_ema)
        if model.config.n_sources != config.data.n_sources:
            logger.warning(
                f"Checkpoint was trained for K={model.config.n_sources}, "
                f"separating into K={config.data.n_sources} sources"
            )
        model.eval()
        return cls(model, config, schedule)

    def shaper_for(self, mixture) -> NoiseShaper:
        n = self.config.noise
        mean = torch.as_tensor(mixture, dtype=DTYPE) / self.k
        return NoiseShaper.from_mean(
            n.kind, mean, self.config.data.sample_rate, sigma0=n.sigma0,
            env_window_ms=n.env_window_ms, env_threshold_db=n.env_threshold_db,
        )

    def separate_signal(self, mixture, seed: Optional[int] = None) -> SourceStack:
        seed = self.config.sample.seed if seed is None else seed
        return separate(self.model, mixture, self.shaper_for(mixture), self.schedule, seed, self.k)

    def separate_file(self, input_path: str, out_dir: str, seed: Optional[int] = None) -> Dict[str, object]:
        """
        Separate one WAV file and write <stem>_src{k}.wav for k = 1..K

        Returns:
            Dictionary with the input path, written outputs and the number of
            network evaluations
        """
        mixture = self.audio.load_audio(input_path)
        logger.info(f"Separating {input_path} ({len(mixture)} samples, schedule {self.schedule})")
        sources = self.separate_signal(mixture, seed)

        stem = os.path.splitext(os.path.basename(input_path))[0]
        outputs = []
        for i, row in enumerate(sources.data.numpy(), start=1):
            out_path = os.path.join(out_dir, f"{stem}_src{i}.wav")
            self.audio.save_audio(out_path, row)
            outputs.append(out_path)
        return {"input_path": input_path, "outputs": outputs, "nfe": self.schedule.nfe, "success": True}

    def batch_separate(self, input_paths: List[str], out_dir: str, seed: Optional[int] = None) -> List[Dict[str, object]]:
        """Separate several files; a failing file is reported and the rest continue"""
        results = []
        for path in input_paths:
            try:
                results.append(self.separate_file(path, out_dir, seed))
            except (AudioIOError, ValidationError, NumericalError) as e:
                logger.error(f"Failed to separate {path}: {e}")
                results.append({"input_path": path, "outputs": [], "error": str(e), "success": False})
        return results
