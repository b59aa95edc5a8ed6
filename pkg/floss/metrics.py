"""
SI-SDR and permutation-resolved scoring
"""

import csv
import itertools
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .utils.exceptions import ValidationError


SISDR_CLAMP = 100.0
BRUTE_FORCE_MAX = 4


def _as_array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def si_sdr(est, ref) -> float:
    """
    10 log10(||a ref||^2 / ||est - a ref||^2) with a = <est, ref> / ||ref||^2,
    clamped to [-100, 100] dB
    """
    est, ref = _as_array(est), _as_array(ref)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValidationError(f"si_sdr needs two 1-D signals of equal length, got {est.shape} and {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise ValidationError("si_sdr reference signal is all zeros")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    residual = est - target
    num = float(target @ target)
    den = float(residual @ residual)
    # a silent estimate is orthogonal to every reference
    if num == 0.0:
        return -SISDR_CLAMP
    if den == 0.0:
        return SISDR_CLAMP
    return float(np.clip(10.0 * np.log10(num / den), -SISDR_CLAMP, SISDR_CLAMP))


def sisdr_matrix(est_stack, ref_stack) -> np.ndarray:
    """m[a, k] = si_sdr(est[a], ref[k])"""
    est, ref = _as_array(est_stack), _as_array(ref_stack)
    if est.shape != ref.shape or est.ndim != 2:
        raise ValidationError(f"Expected two K x L stacks of equal shape, got {est.shape} and {ref.shape}")
    k = est.shape[0]
    return np.array([[si_sdr(est[a], ref[b]) for b in range(k)] for a in range(k)])


@dataclass
class ScoreRow:
    """perm[k] is the estimate index assigned to reference k"""
    example_id: int
    perm: Tuple[int, ...]
    per_source: List[float]
    baseline: Optional[float] = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_source))


def best_perm_score(est_stack, ref_stack, example_id: int = 0, brute_force: Optional[bool] = None) -> ScoreRow:
    """
    Assignment of estimates to references maximizing the mean SI-SDR

    K <= 4 enumerates every permutation (first best in lexicographic order);
    larger K uses the Hungarian algorithm on the SI-SDR matrix.
    """
    m = sisdr_matrix(est_stack, ref_stack)
    k = m.shape[0]
    if brute_force is None:
        brute_force = k <= BRUTE_FORCE_MAX
    if brute_force:
        best, best_score = None, None
        for perm in itertools.permutations(range(k)):
            score = sum(m[perm[j], j] for j in range(k))
            if best_score is None or score > best_score:
                best, best_score = perm, score
    else:
        rows, cols = linear_sum_assignment(-m)
        best = [0] * k
        for a, j in zip(rows, cols):
            best[j] = int(a)
        best = tuple(best)
    return ScoreRow(example_id=example_id, perm=tuple(int(p) for p in best),
                    per_source=[float(m[best[j], j]) for j in range(k)])


def baseline_score(mixture, ref_stack) -> float:
    """Mean SI-SDR of the mixture used as the estimate of every source"""
    ref = _as_array(ref_stack)
    y = _as_array(mixture)
    return float(np.mean([si_sdr(y, r) for r in ref]))


@dataclass
class ScoreReport:
    rows: List[ScoreRow] = field(default_factory=list)
    nfe: Optional[int] = None

    @property
    def mean(self) -> float:
        return float(np.mean([r.mean for r in self.rows])) if self.rows else float("nan")

    @property
    def median(self) -> float:
        return float(np.median([r.mean for r in self.rows])) if self.rows else float("nan")

    @property
    def baseline_mean(self) -> float:
        values = [r.baseline for r in self.rows if r.baseline is not None]
        return float(np.mean(values)) if values else float("nan")

    @property
    def improvement(self) -> float:
        return self.mean - self.baseline_mean

    def write_csv(self, path: str):
        """metrics.csv: id, perm, sisdr_src1..K, sisdr_mean, baseline_mean"""
        k = len(self.rows[0].per_source) if self.rows else 0
        header = ["id", "perm"] + [f"sisdr_src{i}" for i in range(1, k + 1)] + ["sisdr_mean", "baseline_mean"]
        out_dir = os.path.dirname(path)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in self.rows:
                writer.writerow(
                    [r.example_id, " ".join(str(p) for p in r.perm)]
                    + [f"{v:.6f}" for v in r.per_source]
                    + [f"{r.mean:.6f}", "" if r.baseline is None else f"{r.baseline:.6f}"]
                )


def summarize(rows: Sequence[ScoreRow]) -> str:
    report = ScoreReport(list(rows))
    return (f"SI-SDR mean {report.mean:.2f} dB, median {report.median:.2f} dB, "
            f"baseline {report.baseline_mean:.2f} dB over {len(report.rows)} mixtures")
