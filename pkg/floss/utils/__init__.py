"""
Utilities Package
"""

from .config import get_config, reload_config, Config, ConfigManager
from .exceptions import (
    ConfigurationError, ValidationError, DataError, NumericalError, AudioIOError, CheckpointError
)
from .audio_io import AudioProcessor
from .logger import setup_logging, log_run_header
from .validation import FileValidator, InputValidator

__all__ = [
    "get_config", "reload_config", "Config", "ConfigManager",
    "ConfigurationError", "ValidationError", "DataError", "NumericalError", "AudioIOError", "CheckpointError",
    "AudioProcessor",
    "setup_logging", "log_run_header",
    "FileValidator", "InputValidator"
]
