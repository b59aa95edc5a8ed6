"""
Flow-matching core: slice geometry, flow path, assignment, losses, noise shaping, sampling
"""

from .geometry import DTYPE, MeanStack, ProjectorK, SourceStack, mix, project_mean, project_perp
from .flowpath import FlowPair, FlowState, WrappedDrift, interpolate, make_pair, make_x0, target
from .assignment import PermutationAssignment, euclidean_assign, ot_couple, pit_assign
from .losses import PETLoss, TimeWeighting, loss_db, loss_normalized, loss_raw, sample_time
from .noiseshape import NoiseShaper, envelope
from .sampler import Schedule, Separator, euler_integrate, make_schedule, parse_schedule, separate

__all__ = [
    "DTYPE", "MeanStack", "ProjectorK", "SourceStack", "mix", "project_mean", "project_perp",
    "FlowPair", "FlowState", "WrappedDrift", "interpolate", "make_pair", "make_x0", "target",
    "PermutationAssignment", "euclidean_assign", "ot_couple", "pit_assign",
    "PETLoss", "TimeWeighting", "loss_db", "loss_normalized", "loss_raw", "sample_time",
    "NoiseShaper", "envelope",
    "Schedule", "Separator", "euler_integrate", "make_schedule", "parse_schedule", "separate",
]
