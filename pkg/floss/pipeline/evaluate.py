"""
Evaluation: separate a seeded synthetic eval set and score it with SI-SDR
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

from loguru import logger

from ..core.flowpath import VelocityFn
from ..core.noiseshape import NoiseShaper
from ..core.sampler import Schedule, parse_schedule, separate_many
from ..metrics import ScoreReport, ScoreRow, baseline_score, best_perm_score, summarize
from ..utils.config import Config
from .synth import SyntheticDataset


CHUNK = 8


class Evaluator:
    """Separates eval mixtures in batches and builds the metric table"""

    def __init__(self, model: VelocityFn, config: Config, schedule: Optional[Schedule] = None):
        self.model = model
        self.config = config
        self.schedule = schedule or parse_schedule(config.sample.schedule)
        self.dataset = SyntheticDataset(config, seed=config.eval.seed)
        self.k = config.data.n_sources

    def _score_chunk(self, indices: List[int]) -> List[ScoreRow]:
        n = self.config.noise
        pairs = [self.dataset.example(i) for i in indices]
        mixtures = [p.cond.mixture for p in pairs]
        shapers = [
            NoiseShaper.from_mean(n.kind, p.cond.mean, self.config.data.sample_rate, sigma0=n.sigma0,
                                  env_window_ms=n.env_window_ms, env_threshold_db=n.env_threshold_db)
            for p in pairs
        ]
        seeds = [self.config.sample.seed + i for i in indices]
        estimates = separate_many(self.model, mixtures, shapers, self.schedule, seeds, self.k)

        rows = []
        for i, pair, mixture, est in zip(indices, pairs, mixtures, estimates):
            row = best_perm_score(est.data, pair.x1, example_id=i)
            row.baseline = baseline_score(mixture, pair.x1)
            logger.debug(f"mixture {i}: SI-SDR {row.mean:.2f} dB (baseline {row.baseline:.2f} dB)")
            rows.append(row)
        return rows

    def evaluate(self, n_mixtures: Optional[int] = None, out_path: Optional[str] = None) -> ScoreReport:
        """
        Separate and score the eval set

        Args:
            n_mixtures: number of mixtures (defaults to eval.n_mixtures)
            out_path: where to write metrics.csv, if given

        Returns:
            ScoreReport with per-mixture rows, baselines and the NFE of the schedule
        """
        n_mixtures = self.config.eval.n_mixtures if n_mixtures is None else n_mixtures
        chunks = [list(range(s, min(s + CHUNK, n_mixtures))) for s in range(0, n_mixtures, CHUNK)]
        workers = max(1, self.config.performance.threads)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(self._score_chunk, chunks))

        report = ScoreReport(rows=[row for rows in results for row in rows], nfe=self.schedule.nfe)
        logger.info(f"{summarize(report.rows)}; schedule {self.schedule} (NFE {report.nfe})")
        if out_path:
            report.write_csv(out_path)
            logger.info(f"Metrics written to {out_path}")
        return report


def evaluate(model: VelocityFn, config: Config, schedule: Optional[Schedule] = None,
             out_dir: Optional[str] = None) -> ScoreReport:
    out_path = os.path.join(out_dir, "metrics.csv") if out_dir else None
    return Evaluator(model, config, schedule).evaluate(out_path=out_path)
