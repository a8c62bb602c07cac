"""Logging configuration for the CLI and the HTTP service."""
import logging

from rich.console import Console
from rich.logging import RichHandler

# Overridden by SCENEFIT_LOG_LEVEL or --log-level
LOG_LEVEL = "INFO"

# Chatty third-party loggers, capped at WARNING unless we run at DEBUG.
NOISY_LOGGERS = ("trimesh", "multipart", "uvicorn.access")


def setup_logging(log_level: str = LOG_LEVEL, plain: bool = False):
    """Configure the root logger with a single stderr handler.

    stdout stays free for machine-readable command output. `plain` swaps the
    rich handler for a timestamped text formatter (log files, CI).
    """
    level = log_level.upper()
    logger = logging.getLogger()
    logger.setLevel(level)

    if plain:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
    else:
        handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s", datefmt="[%X]"))
    handler.setLevel(level)

    # Calling this twice (app import, then CLI) must not duplicate output
    if not logger.handlers:
        logger.addHandler(handler)
    else:
        for existing in logger.handlers:
            existing.setLevel(level)

    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(level if level == "DEBUG" else "WARNING")

    logging.debug(f"Logging configured with level: {level}")
