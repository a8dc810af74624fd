"""Logging configuration helpers."""

from __future__ import annotations

import copy
import logging.config
from typing import Optional

from app.core.errors import ConfigError


LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "format": "%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "default",
            "level": "DEBUG",
            "stream": "ext://sys.stderr",
        },
    },
    "loggers": {
        # numba logs every compilation pass at DEBUG
        "numba": {"level": "WARNING"},
    },
    "root": {"handlers": ["console"], "level": "INFO"},
}


def configure_logging(level: Optional[str] = None) -> None:
    """Configure console logging for the command line tools."""
    config = copy.deepcopy(LOGGING_CONFIG)
    if level:
        config["root"]["level"] = level.upper()
    try:
        logging.config.dictConfig(config)
    except ValueError as exc:
        raise ConfigError(f"Invalid log level {level!r}") from exc
