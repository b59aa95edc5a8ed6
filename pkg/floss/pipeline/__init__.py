"""
Training and evaluation pipeline
"""

from .synth import MixSpec, SyntheticDataset, make_example, synth_sources
from .trainer import EMA, Trainer, lr_at, train
from .evaluate import Evaluator, evaluate

__all__ = [
    "MixSpec", "SyntheticDataset", "make_example", "synth_sources",
    "EMA", "Trainer", "lr_at", "train",
    "Evaluator", "evaluate",
]
