"""Logging utilities for TimefrontRMT."""

from __future__ import annotations

import inspect
import logging
import sys
from pathlib import Path
from typing import Optional

from loguru import logger


LOG_NAME = "tfrmt.log"


class InterceptHandler(logging.Handler):
    """Forward stdlib logging records into Loguru under their logger name.

    The caller is found by walking out of the logging package, so records from
    scipy or numpy carry the frame that issued them.
    """

    def emit(self, record: logging.LogRecord) -> None:  # noqa: D401
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno
        frame, depth = inspect.currentframe(), 0
        while frame is not None and (depth == 0 or frame.f_code.co_filename == logging.__file__):
            frame = frame.f_back
            depth += 1
        logger.bind(name=record.name).opt(depth=depth, exception=record.exc_info).log(
            level, record.getMessage()
        )


def setup_logging(level: str = "INFO", log_dir: Optional[Path] = None) -> None:
    """Initialise log sinks and intercept stdlib logging."""
    logger.remove()
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_dir / LOG_NAME,
            rotation="1 MB",
            retention=5,
            enqueue=True,
            encoding="utf-8",
            level=level,
            backtrace=False,
            diagnose=False,
        )
    logger.add(lambda msg: print(msg, end="", file=sys.stderr), level=level)

    logging.basicConfig(handlers=[InterceptHandler()], level=level, force=True)


def get_logger(name: Optional[str] = None):
    """Return a module scoped logger bound to Loguru."""
    return logger.bind(name=name or "tfrmt")
