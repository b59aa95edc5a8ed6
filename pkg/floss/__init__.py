"""
FLOSS Package
"""

from .main import main

__version__ = "1.0.0"
__author__ = "FLOSS Team"

__all__ = ["main"]
