"""
Ablation grid over loss, time weighting, noise shaping, assignment and sampling schedule
"""

import copy
import csv
import itertools
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from loguru import logger

from .core.sampler import SCHEDULE_KINDS, parse_schedule
from .nn.eqnet import EqNet
from .pipeline.evaluate import Evaluator
from .pipeline.trainer import Trainer
from .utils.config import ASSIGNMENTS, LOSS_KINDS, NOISE_KINDS, WEIGHTING_KINDS, Config, validate_config
from .utils.exceptions import ConfigurationError, ValidationError


AXIS_DEFAULTS: Dict[str, Sequence[str]] = {
    "loss": LOSS_KINDS,
    "time_weighting": WEIGHTING_KINDS,
    "noise": NOISE_KINDS,
    "assignment": ASSIGNMENTS,
    "schedule": ("linear:25", "custom5", "custom5r", "single"),
}
TRAINING_AXES = ("loss", "time_weighting", "noise", "assignment")
TABLE_COLUMNS = ("loss", "time_weighting", "noise", "assignment", "schedule", "nfe", "sisdr", "baseline")


@dataclass
class AblationRow:
    loss: str
    time_weighting: str
    noise: str
    assignment: str
    schedule: str
    nfe: int
    sisdr: float
    baseline: float


def parse_axes(specs: Sequence[str]) -> Dict[str, List[str]]:
    """'loss' takes every value of the axis, 'loss=raw,db' restricts it"""
    axes: Dict[str, List[str]] = {}
    for spec in specs:
        name, _, values = spec.partition("=")
        name = name.strip()
        if name not in AXIS_DEFAULTS:
            raise ConfigurationError(f"Unknown ablation axis {name!r}; choose from {sorted(AXIS_DEFAULTS)}")
        chosen = [v.strip() for v in values.split(",") if v.strip()] if values else list(AXIS_DEFAULTS[name])
        if name == "schedule":
            for v in chosen:
                try:
                    parse_schedule(v)
                except ValidationError as e:
                    raise ConfigurationError(f"Ablation schedule {v!r}: {e}")
        else:
            bad = [v for v in chosen if v not in AXIS_DEFAULTS[name]]
            if bad:
                raise ConfigurationError(f"Unknown value(s) {bad} for ablation axis {name!r}")
        axes[name] = chosen
    return axes


def apply_cell(config: Config, cell: Dict[str, str], out_dir: str) -> Config:
    cfg = copy.deepcopy(config)
    if "loss" in cell:
        cfg.loss.kind = cell["loss"]
    if "time_weighting" in cell:
        cfg.loss.time_weighting = cell["time_weighting"]
    if "noise" in cell:
        cfg.noise.kind = cell["noise"]
    if "assignment" in cell:
        cfg.train.assignment = cell["assignment"]
    cfg.train.output_dir = out_dir
    validate_config(cfg)
    return cfg


def cell_name(cell: Dict[str, str]) -> str:
    return "_".join(f"{k}-{v}" for k, v in cell.items()) or "base"


class Ablation:
    """Trains one model per training cell and evaluates it under every schedule"""

    def __init__(self, config: Config, axes: Dict[str, List[str]], out_dir: str):
        self.config = config
        self.axes = axes
        self.out_dir = out_dir
        names = [a for a in TRAINING_AXES if a in axes]
        self.cells = [dict(zip(names, values)) for values in itertools.product(*(axes[a] for a in names))]
        self.schedules = axes.get("schedule", [config.sample.schedule])

    def check_feasible(self):
        total = len(self.cells) * self.config.train.steps
        limit = self.config.ablation.max_total_steps
        if total > limit:
            raise ConfigurationError(
                f"Ablation grid needs {len(self.cells)} trainings x {self.config.train.steps} steps = "
                f"{total} steps, above ablation.max_total_steps = {limit}; narrow the axes or lower train.steps"
            )

    def run(self) -> List[AblationRow]:
        self.check_feasible()
        logger.info(f"Ablation: {len(self.cells)} training cell(s) x {len(self.schedules)} schedule(s)")
        rows = []
        for cell in self.cells:
            cell_dir = os.path.join(self.out_dir, cell_name(cell))
            cfg = apply_cell(self.config, cell, cell_dir)
            result = Trainer(cfg).train()
            model = EqNet.from_checkpoint(result.checkpoint_path, use_ema=cfg.sample.use_ema)
            model.eval()
            for schedule_text in self.schedules:
                schedule = parse_schedule(schedule_text)
                metrics_path = os.path.join(cell_dir, f"metrics_{str(schedule).replace(':', '')}.csv")
                report = Evaluator(model, cfg, schedule).evaluate(out_path=metrics_path)
                rows.append(AblationRow(
                    loss=cfg.loss.kind, time_weighting=cfg.loss.time_weighting, noise=cfg.noise.kind,
                    assignment=cfg.train.assignment, schedule=str(schedule), nfe=schedule.nfe,
                    sisdr=report.mean, baseline=report.baseline_mean,
                ))
                logger.info(f"{cell_name(cell)} / {schedule}: SI-SDR {report.mean:.2f} dB")
        self.write_table(rows)
        return rows

    def write_table(self, rows: List[AblationRow], path: Optional[str] = None):
        path = path or os.path.join(self.out_dir, "ablation.csv")
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TABLE_COLUMNS)
            for r in rows:
                writer.writerow([r.loss, r.time_weighting, r.noise, r.assignment, r.schedule, r.nfe,
                                 f"{r.sisdr:.4f}", f"{r.baseline:.4f}"])
        logger.info(f"Ablation table written to {path}")


def ablate(config: Config, axes: Dict[str, List[str]], out_dir: str) -> List[AblationRow]:
    return Ablation(config, axes, out_dir).run()
