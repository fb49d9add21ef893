"""
Structured JSON logging.

One JSON object per line on stderr. Extra fields passed through
``logger.info(msg, extra={"fields": {...}})`` are merged into the record.
"""

import json
import logging
import sys
import time
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional, TextIO

_RESERVED = {"ts", "level", "logger", "msg"}


class JsonFormatter(logging.Formatter):
    """Render a log record as a single JSON line."""

    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "ts": round(record.created, 3),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        fields = getattr(record, "fields", None)
        if fields:
            for key, value in fields.items():
                payload[f"field_{key}" if key in _RESERVED else key] = value
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True, default=str)


def setup_logging(level: str = "INFO", stream: Optional[TextIO] = None) -> None:
    """Install the JSON handler on the root logger (idempotent)."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_lore_json", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonFormatter())
    handler._lore_json = True
    root.addHandler(handler)
    root.setLevel(level.upper())


def log_event(logger: logging.Logger, msg: str, level: int = logging.INFO, **fields: Any) -> None:
    logger.log(level, msg, extra={"fields": fields})


@contextmanager
def log_phase(logger: logging.Logger, phase: str, **fields: Any) -> Iterator[Dict[str, Any]]:
    """
    Log ``phase_start``/``phase_end`` around a block.

    The yielded dict can be filled with results that are attached to the
    ``phase_end`` record.
    """
    summary: Dict[str, Any] = {}
    log_event(logger, "phase_start", phase=phase, **fields)
    start = time.perf_counter()
    try:
        yield summary
    except Exception as exc:
        log_event(logger, "phase_failed", logging.ERROR, phase=phase,
                  error=type(exc).__name__, detail=str(exc),
                  elapsed_s=round(time.perf_counter() - start, 4))
        raise
    log_event(logger, "phase_end", phase=phase,
              elapsed_s=round(time.perf_counter() - start, 4), **summary)
