"""
Process-level settings read from the environment (and an optional .env file).
"""

import logging
import os

import dotenv
from rich.console import Console
from rich.logging import RichHandler

# Load environment variables from .env if present
dotenv.load_dotenv()

redis_host = os.getenv("REDIS_HOST", "localhost")
redis_port = int(os.getenv("REDIS_PORT", 6379))
redis_db = int(os.getenv("REDIS_DB", 0))

# Cached baselines live for a week unless overridden
cache_ttl_seconds = int(os.getenv("MMDP_CACHE_TTL", 604800))

log_level = os.getenv("MMDP_LOG_LEVEL", "WARNING").upper()


def configure_logging(level: str = None) -> None:
    """
    Route library loggers through rich at the configured level.
    """
    logging.basicConfig(
        level=(level or log_level),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True, show_path=False)],
        force=True,
    )
