"""
Source permutation handling: PIT at t=0, Euclidean assignment, and the
mini-batch conditional OT coupling.

Convention: a permutation `perm` reorders the rows of x1 as (pi x1)[a] = x1[perm[a]].
Ties are always resolved towards the lexicographically smallest permutation.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .flowpath import FlowPair, VelocityFn
from .geometry import DTYPE
from ..utils.exceptions import ValidationError
from ..utils.validation import InputValidator


TIE_RTOL = 1e-12


@dataclass(frozen=True)
class PermutationAssignment:
    """A bijection on source indices, stored as an index tuple"""
    perm: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "perm", InputValidator.validate_permutation(self.perm, len(self.perm)))

    @property
    def k(self) -> int:
        return len(self.perm)

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        """Reorder the source axis (-2) of a stack"""
        return x[..., list(self.perm), :]

    def inverse(self) -> "PermutationAssignment":
        inv = [0] * self.k
        for a, b in enumerate(self.perm):
            inv[b] = a
        return PermutationAssignment(tuple(inv))

    def then(self, other: "PermutationAssignment") -> "PermutationAssignment":
        """Index composition: result[a] = self.perm[other.perm[a]]"""
        return PermutationAssignment(tuple(self.perm[b] for b in other.perm))

    def is_identity(self) -> bool:
        return self.perm == tuple(range(self.k))


@dataclass(frozen=True)
class OTBatchPlan:
    """Perfect matching of batch items with the inner source permutation per pair"""
    pairs: List[Tuple[int, int, Tuple[int, ...]]]
    cost_matrix: np.ndarray
    beta: float
    total_cost: float = field(default=0.0)


def lexicographic_assignment(cost: np.ndarray) -> Tuple[Tuple[int, ...], float]:
    """
    Exact minimum-cost assignment (Hungarian) with lexicographic tie-breaking

    Args:
        cost: n x n cost matrix, cost[a, b] = cost of sending row a to column b

    Returns:
        (perm, total) where perm[a] is the column given to row a
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValidationError(f"Assignment cost must be square, got shape {cost.shape}")
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tol = TIE_RTOL * max(1.0, abs(best))

    # Greedily fix the smallest column per row that still admits an optimal completion.
    perm: List[int] = []
    used = set()
    fixed_cost = 0.0
    for a in range(n):
        for b in range(n):
            if b in used:
                continue
            rest_rows = list(range(a + 1, n))
            rest_cols = [c for c in range(n) if c not in used and c != b]
            rest = 0.0
            if rest_rows:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                r, c = linear_sum_assignment(sub)
                rest = float(sub[r, c].sum())
            if fixed_cost + cost[a, b] + rest <= best + tol:
                perm.append(b)
                used.add(b)
                fixed_cost += float(cost[a, b])
                break
    return tuple(perm), best


def pairwise_sq_dist(x0: torch.Tensor, x1: torch.Tensor) -> np.ndarray:
    """c[a, b] = ||x0[a] - x1[b]||^2 for two K x L stacks"""
    diff = x0.unsqueeze(1) - x1.unsqueeze(0)
    return (diff * diff).sum(dim=-1).detach().cpu().numpy()


def euclidean_assign(x0: torch.Tensor, x1: torch.Tensor) -> PermutationAssignment:
    """argmin over permutations of ||x0 - pi x1||^2"""
    InputValidator.validate_same_shape(x0, x1, "x0/x1")
    if x0.dim() != 2:
        raise ValidationError(f"euclidean_assign expects K x L stacks, got {tuple(x0.shape)}")
    perm, _ = lexicographic_assignment(pairwise_sq_dist(x0, x1))
    return PermutationAssignment(perm)


def pit_from_velocity(v0: torch.Tensor, x0: torch.Tensor, x1: torch.Tensor) -> PermutationAssignment:
    """
    PIT choice given the drift already evaluated at t=0

    At t=0 the network input x_t = x0 does not depend on the permutation, so
    only the targets pi x1 - x0 change across the K! candidates.
    """
    k = x0.shape[-2]
    best_perm, best_loss = None, None
    with torch.no_grad():
        for perm in itertools.permutations(range(k)):
            resid = v0 - (x1[list(perm)] - x0)
            loss = float((resid * resid).sum())
            if best_loss is None or loss < best_loss:
                best_perm, best_loss = perm, loss
    return PermutationAssignment(best_perm)


def pit_assign(model: VelocityFn, pair: FlowPair, pit_max: int = 4) -> PermutationAssignment:
    """argmin over all K! permutations of the sample-wise loss at t=0"""
    if pair.k > pit_max:
        raise ValidationError(
            f"PIT enumerates K! = {math.factorial(pair.k)} permutations and is limited to K <= {pit_max}; "
            "use euclidean_assign (train.assignment = euclidean) for more sources"
        )
    with torch.no_grad():
        t0 = torch.zeros(1, dtype=DTYPE)
        v0 = model(t0, pair.x0.unsqueeze(0), pair.cond.mean.unsqueeze(0))[0]
    return pit_from_velocity(v0, pair.x0, pair.x1)


def ot_couple(x0_batch: Sequence[torch.Tensor], x1_batch: Sequence[torch.Tensor],
              cond_batch: Sequence[torch.Tensor], beta: float = 1e4, ot_max: int = 64) -> OTBatchPlan:
    """
    Exact discrete OT between noised mixtures and source stacks of a batch

    C[i, j] = min_pi ||x0_i - pi x1_j||^2 + beta ||c_i - c_j||^2, solved with the
    Hungarian algorithm; each pair keeps the inner minimizing permutation.
    """
    b = len(x0_batch)
    if not (len(x1_batch) == b and len(cond_batch) == b):
        raise ValidationError("ot_couple needs batches of equal size")
    if b < 1 or b > ot_max:
        raise ValidationError(f"ot_couple batch size must be in [1, {ot_max}], got {b}")
    if beta <= 0:
        raise ValidationError(f"ot_couple beta must be positive, got {beta}")

    cost = np.zeros((b, b))
    inner = {}
    for i in range(b):
        for j in range(b):
            assignment = euclidean_assign(x0_batch[i], x1_batch[j])
            d = x0_batch[i] - assignment.apply(x1_batch[j])
            dc = cond_batch[i] - cond_batch[j]
            cost[i, j] = float((d * d).sum()) + beta * float((dc * dc).sum())
            inner[(i, j)] = assignment.perm

    match, total = lexicographic_assignment(cost)
    pairs = [(i, j, inner[(i, j)]) for i, j in enumerate(match)]
    return OTBatchPlan(pairs=pairs, cost_matrix=cost, beta=beta, total_cost=total)
