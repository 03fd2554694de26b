"""
Logger utility for the cross-diffusion toolkit.

Module loggers write to stdout and, when LOG_FILE is set, to a size-rotated
log file. Experiment runs additionally copy the records of their own thread
into run.log inside the artifact directory, so concurrent sweep entries keep
separate logs.
"""

import logging
import sys
import threading
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Iterator, Optional

PACKAGE_LOGGER = "src"
DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
RUN_LOG_FORMAT = "%(asctime)s - %(levelname)s - %(module)s - %(message)s"
DEFAULT_MAX_BYTES = 10 * 1024 * 1024
DEFAULT_BACKUP_COUNT = 3


def setup_logger(
    name: str,
    level: str = "INFO",
    log_file: Optional[Path] = None,
    format_string: Optional[str] = None,
    max_bytes: int = DEFAULT_MAX_BYTES,
    backup_count: int = DEFAULT_BACKUP_COUNT
) -> logging.Logger:
    """
    Set up a logger with consistent formatting.

    Args:
        name: Logger name (typically __name__ of the module)
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional file path; the file is rotated at max_bytes
        format_string: Optional custom format string
        max_bytes: Size at which log_file is rotated (0 disables rotation)
        backup_count: Number of rotated files kept

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    # Avoid duplicate handlers
    if logger.handlers:
        return logger

    log_level = getattr(logging, level.upper(), logging.INFO)
    logger.setLevel(log_level)
    formatter = logging.Formatter(format_string or DEFAULT_FORMAT)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(log_file, maxBytes=max_bytes, backupCount=backup_count)
        file_handler.setLevel(log_level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger with default configuration from config manager.

    Args:
        name: Logger name (typically __name__ of the module)

    Returns:
        Configured logger instance
    """
    try:
        from src.config.config_manager import get_config
        config = get_config()
        return setup_logger(
            name=name,
            level=config.log_level,
            log_file=config.log_file,
            max_bytes=config.log_max_bytes,
            backup_count=config.log_backup_count
        )
    except Exception:
        # Fallback if config not available
        return setup_logger(name=name, level="INFO")


@contextmanager
def run_log(path: Path, level: str = "INFO") -> Iterator[Path]:
    """
    Copy package log records of the calling thread into path.

    Records are collected from every logger below PACKAGE_LOGGER while the
    block runs; records of other threads are left out.

    Args:
        path: Log file, truncated on entry
        level: Minimum level written

    Yields:
        The log file path
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="w")
    handler.setLevel(getattr(logging, level.upper(), logging.INFO))
    handler.setFormatter(logging.Formatter(RUN_LOG_FORMAT))
    thread = threading.get_ident()
    handler.addFilter(lambda record: record.thread == thread)

    package = logging.getLogger(PACKAGE_LOGGER)
    package.addHandler(handler)
    try:
        yield path
    finally:
        package.removeHandler(handler)
        handler.close()
