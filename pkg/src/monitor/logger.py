"""JSON-lines run log shared by the CLI and the library modules

The ``tn_kalman`` logger carries command-level records. Library code logs
under ``src.*`` with ``logging.getLogger(__name__)``; both trees end up in
one rotating file and on stderr.
"""
import json
import logging
import sys
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Dict, Optional

import numpy as np

APP_LOGGER = 'tn_kalman'
LIBRARY_LOGGER = 'src'
MAX_BYTES = 10 * 1024 * 1024
BACKUP_COUNT = 5

# Attributes every LogRecord carries; anything else came in through ``extra``
_RECORD_FIELDS = set(vars(logging.makeLogRecord({}))) | {'message', 'asctime', 'taskName'}


def _to_builtin(value):
    """json.dumps fallback for numpy scalars and arrays"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


class JsonFormatter(logging.Formatter):
    """One JSON object per record; ``extra`` fields become top-level keys"""

    def format(self, record):
        entry = {
            'timestamp': datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
        }
        if record.exc_info:
            entry['exception'] = self.formatException(record.exc_info)

        for key, value in vars(record).items():
            if key in _RECORD_FIELDS:
                continue
            try:
                json.dumps(value, default=_to_builtin)
                entry[key] = value
            except (TypeError, ValueError):
                entry[key] = str(value)
        return json.dumps(entry, default=_to_builtin)


def _build_handlers(log_path: Path, console_level: int, file_level: int):
    file_handler = RotatingFileHandler(log_path, maxBytes=MAX_BYTES, backupCount=BACKUP_COUNT)
    file_handler.setFormatter(JsonFormatter())
    file_handler.setLevel(file_level)

    # stderr keeps stdout free for the JSON summary
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter(
        '%(asctime)s [%(levelname)s] %(name)s: %(message)s', datefmt='%H:%M:%S'))
    console_handler.setLevel(console_level)
    return [file_handler, console_handler]


class Logger:
    """Process-wide logger; the first instantiation configures the handlers"""
    _instance = None
    _configured = False

    def __new__(cls, *args, **kwargs):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self, log_file: str = 'tn_kalman.log', log_dir: str = 'logs',
                 console_level: str = 'INFO', file_level: str = 'DEBUG'):
        if Logger._configured:
            return

        console = logging.getLevelName(console_level.upper())
        to_file = logging.getLevelName(file_level.upper())
        if not isinstance(console, int) or not isinstance(to_file, int):
            raise ValueError(f"Unknown log level: {console_level!r} / {file_level!r}")

        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = log_dir / log_file

        handlers = _build_handlers(self.log_path, console, to_file)
        for name in (APP_LOGGER, LIBRARY_LOGGER):
            target = logging.getLogger(name)
            target.handlers.clear()
            target.propagate = False
            target.setLevel(min(console, to_file))
            for handler in handlers:
                target.addHandler(handler)

        self.logger = logging.getLogger(APP_LOGGER)
        Logger._configured = True
        self.logger.debug("Logging to %s", self.log_path)

    @classmethod
    def reset(cls):
        """Close the handlers and drop the singleton"""
        for name in (APP_LOGGER, LIBRARY_LOGGER):
            target = logging.getLogger(name)
            for handler in list(target.handlers):
                handler.close()
                target.removeHandler(handler)
        cls._instance = None
        cls._configured = False

    def log(self, message: str, level: str = 'info', **fields):
        """Log a message with structured fields passed as keyword arguments"""
        getattr(self.logger, level.lower())(message, extra=fields or None)

    def log_error(self, error: Exception, context: Optional[Dict] = None):
        self.logger.error(
            str(error),
            exc_info=error,
            extra={'context': context or {}, 'error_type': type(error).__name__},
        )

    def log_step(self, metrics: Dict):
        """Per-step filter metrics, DEBUG level"""
        self.logger.debug(
            f"Step {metrics.get('t')} - innovation: {metrics.get('innovation', 0.0):.4e}",
            extra={'step': metrics},
        )

    def log_summary(self, summary: Dict):
        self.logger.info("Run summary", extra={'summary': summary})
