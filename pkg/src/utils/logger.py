"""
Logging utilities.
"""

import logging
import os
import sys
from typing import Optional

from dotenv import find_dotenv, load_dotenv


def _level_from_env(default: int) -> int:
    # loggers are built at import time, before any entry point loads .env
    load_dotenv(find_dotenv(usecwd=True))
    name = os.getenv("OTFS_IPAC_LOG_LEVEL")
    if not name:
        return default
    level = logging.getLevelName(name.upper())
    return level if isinstance(level, int) else default


def setup_logger(name: str, level: Optional[int] = None) -> logging.Logger:
    """Set up a logger with consistent formatting.

    Records go to stderr so tables and CSV written to stdout stay clean.
    """
    if level is None:
        level = _level_from_env(logging.INFO)

    logger = logging.getLogger(name)
    logger.setLevel(level)

    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setLevel(level)

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.propagate = False

    return logger
