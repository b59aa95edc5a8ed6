"""
Training loop: AdamW with linear warmup and cosine decay, gradient clipping,
weight EMA, loss curve CSV and checkpoints.
"""

import csv
import json
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
from loguru import logger
from tqdm import tqdm

from ..core.assignment import PermutationAssignment, ot_couple
from ..core.flowpath import FlowPair, WrappedDrift
from ..core.geometry import project_perp
from ..core.losses import PETLoss, sample_times
from ..nn.eqnet import EqNet, NetConfig
from ..nn.tensorcore import save_checkpoint, seed_everything
from ..utils.config import Config
from ..utils.exceptions import NumericalError
from .synth import SyntheticDataset


LOSS_COLUMNS = ("step", "lr", "loss", "grad_norm", "n_valid")


def warmup_steps(steps: int, warmup_fraction: float) -> int:
    return int(round(warmup_fraction * steps))


def lr_at(step: int, steps: int, peak: float, warmup: int) -> float:
    """
    Learning rate of update `step` (1-based): linear from 0 to `peak` over
    `warmup` updates, then cosine decay to 0 at `steps`
    """
    if warmup > 0 and step <= warmup:
        return peak * step / warmup
    if steps <= warmup:
        return peak
    progress = min(1.0, (step - warmup) / (steps - warmup))
    return 0.5 * peak * (1.0 + math.cos(math.pi * progress))


class EMA:
    """Exponential moving average of a module's floating point state"""

    def __init__(self, model: torch.nn.Module, decay: float = 0.999):
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    @torch.no_grad()
    def update(self, model: torch.nn.Module):
        # e + (1 - decay)(p - e) leaves e unchanged when p == e
        for k, v in model.state_dict().items():
            self.shadow[k].lerp_(v.detach(), 1.0 - self.decay)

    def state_dict(self) -> Dict[str, torch.Tensor]:
        return {k: v.clone() for k, v in self.shadow.items()}


@dataclass
class TrainResult:
    checkpoint_path: str
    losses: List[float] = field(default_factory=list)
    steps_run: int = 0
    skipped: int = 0
    clamped: int = 0


class Trainer:
    """Trains an EqNet on seeded synthetic mixtures"""

    def __init__(self, config: Config, model: Optional[EqNet] = None):
        self.config = config
        seed_everything(config.train.seed)
        self.model = model or EqNet(NetConfig.from_config(config))
        self.model.train()
        self.drift = WrappedDrift(self.model)
        self.loss = PETLoss.from_config(config.loss, config.train.assignment)
        self.dataset = SyntheticDataset(config, seed=config.train.seed)
        self.ema = EMA(self.model, config.train.ema_decay)

        t = config.train
        self.warmup = warmup_steps(t.steps, t.warmup_fraction)
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=t.lr, weight_decay=t.weight_decay)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lambda done: lr_at(done + 1, t.steps, t.lr, self.warmup) / t.lr
        )
        self.time_generator = torch.Generator().manual_seed(t.seed)
        self.output_dir = t.output_dir

    def current_lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def _ot_batch(self, pairs: List[FlowPair]) -> Tuple[List[FlowPair], List[PermutationAssignment]]:
        """
        Re-pair noise and sources with mini-batch OT; the noise of item i is moved
        onto the slice of its matched sources j
        """
        t = self.config.train
        plan = ot_couple([p.x0 for p in pairs], [p.x1 for p in pairs], [p.cond.mean for p in pairs],
                         beta=t.ot_beta, ot_max=t.ot_max)
        coupled, perms = [], []
        for i, j, perm in plan.pairs:
            src, dst = pairs[i], pairs[j]
            z = src.z if src.z is not None else src.x0 - src.cond.data
            coupled.append(FlowPair(x0=dst.cond.data + project_perp(z), x1=dst.x1, cond=dst.cond, z=z))
            perms.append(PermutationAssignment(perm))
        return coupled, perms

    def _dump_seeds(self, step: int, indices: List[int]):
        path = os.path.join(self.output_dir, "divergence_seeds.json")
        os.makedirs(self.output_dir, exist_ok=True)
        with open(path, "w") as fh:
            json.dump({
                "step": step,
                "dataset_seed": self.dataset.seed,
                "indices": indices,
                "example_seeds": [self.dataset.example_seed(i) for i in indices],
            }, fh, indent=2)
        logger.error(f"Training diverged at step {step}; batch seeds written to {path}")

    def _prefetch(self, pool: ThreadPoolExecutor, steps: int):
        """Yield batches in step order while keeping a bounded number in flight"""
        depth = max(1, self.config.performance.prefetch)
        pending = deque()
        next_step = 0
        while next_step < steps or pending:
            while next_step < steps and len(pending) < depth:
                pending.append(pool.submit(self.dataset.batch, next_step, self.config.train.batch_size))
                next_step += 1
            yield pending.popleft().result()

    def train_step(self, step: int, pairs: List[FlowPair]) -> Optional[Dict[str, float]]:
        """One optimizer update; returns None when every example of the batch was degenerate"""
        t = self.config.train
        skipped_before = self.loss.counters.skipped
        perms = None
        if t.assignment == "ot":
            pairs, perms = self._ot_batch(pairs)
        times = sample_times(self.loss.weighting, len(pairs), self.time_generator)
        loss, _ = self.loss.batch(self.drift, pairs, times, perms)
        if loss is None:
            logger.warning(f"Step {step}: every example was degenerate, skipping update")
            return None
        if not bool(torch.isfinite(loss)):
            raise NumericalError(f"Non-finite loss at step {step}")

        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), t.grad_clip)
        lr = self.current_lr()
        self.optimizer.step()
        self.scheduler.step()
        self.ema.update(self.model)
        return {"step": step, "lr": lr, "loss": loss.item(), "grad_norm": float(grad_norm),
                "n_valid": len(pairs) - (self.loss.counters.skipped - skipped_before)}

    def save(self, path: str, step: int):
        ckpt = self.model.to_checkpoint(
            self.ema.state_dict(), step=step, config=self.config.to_dict(),
            counters={"skipped": self.loss.counters.skipped, "clamped": self.loss.counters.clamped},
        )
        save_checkpoint(path, ckpt)

    def train(self, steps: Optional[int] = None) -> TrainResult:
        """
        Run the configured number of updates

        Returns:
            TrainResult with the final checkpoint path and the loss curve
        """
        t = self.config.train
        steps = t.steps if steps is None else steps
        os.makedirs(self.output_dir, exist_ok=True)
        final_path = os.path.join(self.output_dir, "model.floss")
        result = TrainResult(checkpoint_path=final_path)

        logger.info(
            f"Training {self.model.parameter_count()} parameters for {steps} steps "
            f"(batch {t.batch_size}, loss {self.loss.kind}, weighting {self.loss.weighting.kind}, "
            f"noise {self.config.noise.kind}, assignment {t.assignment})"
        )
        show = self.config.logging.progress
        with open(os.path.join(self.output_dir, "loss.csv"), "w", newline="") as fh, \
                ThreadPoolExecutor(max_workers=max(1, self.config.performance.threads)) as pool:
            writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
            writer.writeheader()
            # disable=None lets tqdm switch itself off on a non-TTY
            batches = tqdm(self._prefetch(pool, steps), total=steps, disable=None if show else True)
            for step, (pairs, indices) in enumerate(batches, start=1):
                try:
                    row = self.train_step(step, pairs)
                except NumericalError:
                    self._dump_seeds(step, indices)
                    raise
                if row is None:
                    continue
                writer.writerow(row)
                result.losses.append(row["loss"])
                result.steps_run = step

                if step % t.log_every == 0 or step == steps:
                    logger.info(
                        f"step {step}/{steps} lr {row['lr']:.3e} loss {row['loss']:.4f} "
                        f"grad_norm {row['grad_norm']:.3f}"
                    )
                if t.checkpoint_every and step % t.checkpoint_every == 0 and step != steps:
                    self.save(os.path.join(self.output_dir, f"step_{step:06d}.floss"), step)

        self.save(final_path, result.steps_run)
        result.skipped = self.loss.counters.skipped
        result.clamped = self.loss.counters.clamped
        logger.info(
            f"Training finished: {result.skipped} degenerate samples skipped, "
            f"{result.clamped} dB floor clamps"
        )
        return result


def train(config: Config, model: Optional[EqNet] = None) -> TrainResult:
    return Trainer(config, model).train()
