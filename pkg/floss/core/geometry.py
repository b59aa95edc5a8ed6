"""
Source-stack linear algebra: mixtures and the mean/centering projectors.

Stacks are torch tensors of shape (..., K, L) with the source axis at -2.
Projectors are applied as row-mean operations, never as K x K matrices.
"""

from dataclasses import dataclass

import torch

from ..utils.exceptions import ValidationError
from ..utils.validation import InputValidator


DTYPE = torch.float64
SOURCE_DIM = -2


def as_stack(x, name: str = "stack") -> torch.Tensor:
    """Convert array-likes to a float64 tensor and check the (..., K, L) layout"""
    x = torch.as_tensor(x, dtype=DTYPE)
    return InputValidator.validate_stack(x, name)


@dataclass(frozen=True)
class SourceStack:
    """K x L matrix of sources; the mixture is its column sum"""
    data: torch.Tensor

    def __post_init__(self):
        data = torch.as_tensor(self.data, dtype=DTYPE)
        if data.dim() != 2:
            raise ValidationError(f"SourceStack must be K x L, got shape {tuple(data.shape)}")
        if data.shape[0] < 2 or data.shape[1] < 1:
            raise ValidationError(f"SourceStack needs K >= 2 and L > 0, got shape {tuple(data.shape)}")
        InputValidator.validate_finite(data, "SourceStack")
        object.__setattr__(self, "data", data)

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.data.shape[1]

    def mixture(self) -> torch.Tensor:
        return mix(self.data)


@dataclass(frozen=True)
class MeanStack:
    """The mixture average s_bar = y / K, replicated over K rows on demand"""
    mean: torch.Tensor
    k: int

    def __post_init__(self):
        mean = torch.as_tensor(self.mean, dtype=DTYPE)
        if mean.dim() != 1 or mean.shape[0] < 1:
            raise ValidationError(f"MeanStack mean must be a 1-D signal, got shape {tuple(mean.shape)}")
        if self.k < 2:
            raise ValidationError(f"MeanStack needs K >= 2, got {self.k}")
        InputValidator.validate_finite(mean, "MeanStack")
        object.__setattr__(self, "mean", mean)

    @classmethod
    def from_mixture(cls, y, k: int) -> "MeanStack":
        y = torch.as_tensor(y, dtype=DTYPE)
        return cls(mean=y / k, k=k)

    @classmethod
    def from_sources(cls, sources) -> "MeanStack":
        s = sources.data if isinstance(sources, SourceStack) else as_stack(sources)
        return cls(mean=s.mean(dim=SOURCE_DIM), k=s.shape[SOURCE_DIM])

    @property
    def l(self) -> int:  # noqa: E743
        return self.mean.shape[0]

    @property
    def data(self) -> torch.Tensor:
        return self.mean.unsqueeze(0).expand(self.k, -1)

    @property
    def mixture(self) -> torch.Tensor:
        return self.k * self.mean


class ProjectorK:
    """P = 11^T/K and its complement P_perp = I - P, applied along the source axis"""

    def __init__(self, k: int):
        if k < 1:
            raise ValidationError(f"Projector dimension must be positive, got {k}")
        self.k = k

    def _check(self, x: torch.Tensor):
        if x.shape[SOURCE_DIM] != self.k:
            raise ValidationError(f"Projector for K={self.k} applied to stack of shape {tuple(x.shape)}")

    def mean(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        return project_mean(x)

    def perp(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        return project_perp(x)


def mix(s) -> torch.Tensor:
    """y = sum_k s_k over the source axis"""
    s = s.data if isinstance(s, SourceStack) else as_stack(s, "sources")
    InputValidator.validate_finite(s, "sources")
    return s.sum(dim=SOURCE_DIM)


def project_mean(x: torch.Tensor) -> torch.Tensor:
    """Replace every row by the column-wise mean over sources"""
    InputValidator.validate_stack(x)
    return x.mean(dim=SOURCE_DIM, keepdim=True).expand_as(x).clone()


def project_perp(x: torch.Tensor) -> torch.Tensor:
    """Remove the column-wise mean over sources"""
    InputValidator.validate_stack(x)
    return x - x.mean(dim=SOURCE_DIM, keepdim=True)


def row_mean_deviation(x: torch.Tensor, mean: torch.Tensor) -> float:
    """Relative deviation of the source-average of x from a target mean signal"""
    err = float(torch.linalg.vector_norm(x.mean(dim=SOURCE_DIM) - mean))
    scale = float(torch.linalg.vector_norm(mean))
    return err / scale if scale > 0 else err
