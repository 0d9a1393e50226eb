"""
Logging setup. All modules log through loguru's shared logger; this module
only decides where the records go.
"""

import sys
from typing import Optional

from loguru import logger

_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | <cyan>{name}</cyan> - {message}"


def configure_logging(level: Optional[str] = None) -> None:
    """
    Route log records to stderr at the given level

    Args:
        level: Log level name; defaults to REASONER_LOG_LEVEL or INFO
    """
    from utils.config import Settings

    level = (level or Settings().log_level).upper()
    logger.remove()
    logger.add(sys.stderr, level=level, format=_FORMAT)
