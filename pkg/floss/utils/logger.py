"""
Logging configuration: a console sink that cooperates with tqdm progress
bars and a rotating run log
"""

import os
import sys

from loguru import logger
from tqdm import tqdm

from .config import Config


def _console_sink(progress: bool):
    # tqdm.write keeps log lines from tearing an active progress bar
    if progress:
        return lambda message: tqdm.write(message, end="", file=sys.stderr)
    return sys.stderr


def setup_logging(config: Config):
    """
    Configure the console and file sinks from config.logging

    Args:
        config: Configuration object containing logging settings
    """
    settings = config.logging
    logger.remove()
    logger.add(
        _console_sink(settings.progress),
        format=settings.format,
        level=settings.level,
        colorize=not settings.progress,
    )

    try:
        log_dir = os.path.dirname(settings.file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        logger.add(
            settings.file,
            format=settings.format,
            level=settings.level,
            rotation=settings.rotation,
            retention=settings.retention,
            compression="zip",
        )
    except OSError as e:
        logger.warning(f"File logging disabled, cannot write {settings.file}: {e}")

    logger.debug(f"Logging at {settings.level} to console and {settings.file}")


def log_run_header(config: Config, command: str):
    """One line identifying the run in the log file"""
    logger.info(
        f"floss {command}: seed {config.train.seed}, K={config.data.n_sources}, "
        f"loss {config.loss.kind}, noise {config.noise.kind}, schedule {config.sample.schedule}, "
        f"threads {config.performance.threads}"
    )
