"""
Environment configuration

Values come from a `.env` file at the repository root (if present) and the
process environment. Everything has a working default.
"""
import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from rankforge.constants import DEFAULT_MC_DRAWS

# Load environment variables
env_path = Path(__file__).parent.parent / '.env'
load_dotenv(env_path)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

LOG_LEVEL = os.getenv('RANKFORGE_LOG_LEVEL', 'WARNING').upper()

# Quantile caches
CACHE_ENABLED = os.getenv('RANKFORGE_CACHE_ENABLED', 'true').lower() not in ('0', 'false', 'no')
MAX_CACHE_SIZE = int(os.getenv('RANKFORGE_CACHE_SIZE', '256'))

MC_DRAWS = int(os.getenv('RANKFORGE_MC_DRAWS', str(DEFAULT_MC_DRAWS)))


def threads_override() -> Optional[int]:
    """
    Worker count forced through RANKFORGE_THREADS

    Read at call time so a campaign picks up the current environment.

    Returns:
        Positive integer, or None when the variable is unset or empty

    Raises:
        ValueError: If the variable is set to something other than a positive integer
    """
    raw = os.getenv('RANKFORGE_THREADS', '').strip()
    if not raw:
        return None
    value = int(raw)
    if value < 1:
        raise ValueError(f"RANKFORGE_THREADS must be a positive integer, got {raw!r}")
    return value


def configure_logging(level: Optional[str] = None) -> None:
    """Install a single stream handler on the package logger."""
    logger = logging.getLogger('rankforge')
    logger.setLevel((level or LOG_LEVEL).upper())
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
