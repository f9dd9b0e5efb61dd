from __future__ import annotations

import logging
import os

from rich.console import Console
from rich.logging import RichHandler

console = Console(stderr=True)

_configured = False


def setup_logging(level: str | None = None) -> None:
    global _configured
    level_name = (level or os.getenv("GLUE_LOG_LEVEL", "INFO")).upper()
    root = logging.getLogger("src")
    root.setLevel(getattr(logging, level_name, logging.INFO))
    if not _configured:
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=False, log_time_format="[%X]")
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
        _configured = True


def get_logger(name: str) -> logging.Logger:
    setup_logging()
    return logging.getLogger(name)
