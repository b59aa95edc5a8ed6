"""
Network package
"""

from .eqnet import EqNet, NetConfig
from .tensorcore import Checkpoint, grad_check, load_checkpoint, save_checkpoint

__all__ = ["EqNet", "NetConfig", "Checkpoint", "grad_check", "load_checkpoint", "save_checkpoint"]
