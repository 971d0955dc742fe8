import logging
import logging.handlers
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from pythonjsonlogger import jsonlogger

# Record attributes passed through `extra={...}` that both formatters surface
CONTEXT_FIELDS = ('scene_id', 'node_id', 'camera_id', 'iteration', 'step')

ROTATE_BYTES = 10 * 1024 * 1024
ROTATE_BACKUPS = 5

NOISY_LOGGERS = ('PIL', 'imageio', 'matplotlib')


def record_context(record: logging.LogRecord) -> Dict[str, Any]:
    return {name: getattr(record, name) for name in CONTEXT_FIELDS if hasattr(record, name)}


class CustomJsonFormatter(jsonlogger.JsonFormatter):
    """One JSON object per record with the run context flattened in"""

    def add_fields(self, log_record: Dict[str, Any], record: logging.LogRecord, message_dict: Dict) -> None:
        super().add_fields(log_record, record, message_dict)
        log_record['timestamp'] = datetime.fromtimestamp(record.created, timezone.utc).isoformat()
        log_record['level'] = record.levelname
        log_record['logger'] = record.name
        log_record.update(record_context(record))

        if record.exc_info and record.exc_info[0] is not None:
            log_record['error'] = {
                'type': record.exc_info[0].__name__,
                'message': str(record.exc_info[1]),
                'traceback': self.formatException(record.exc_info)
            }


class ContextTextFormatter(logging.Formatter):
    """Plain text lines suffixed with `key=value` context pairs"""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        context = record_context(record)
        if context:
            line += ' [' + ' '.join(f"{k}={v}" for k, v in context.items()) + ']'
        return line


def build_formatter(log_format: str) -> logging.Formatter:
    if log_format == "json":
        return CustomJsonFormatter('%(timestamp)s %(level)s %(name)s %(message)s')
    return ContextTextFormatter('%(asctime)s %(levelname)-7s %(name)s: %(message)s')


def setup_logging(
    log_level: str = "INFO",
    log_format: str = "json",
    log_file: Optional[str] = None,
    log_dir: Optional[Path] = None
) -> logging.Logger:
    """Route every record to stderr and, when a file or directory is given, a rotating file"""
    if log_dir and not log_file:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        log_file = str(log_dir / f"splat_graph_{datetime.now():%Y-%m-%d}.log")

    formatter = build_formatter(log_format)
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.handlers.RotatingFileHandler(
            log_file, maxBytes=ROTATE_BYTES, backupCount=ROTATE_BACKUPS, encoding='utf-8'
        ))
    for handler in handlers:
        handler.setFormatter(formatter)

    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, handlers=handlers, force=True)

    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    logger = logging.getLogger('splat_graph')
    logger.setLevel(level)
    return logger


__all__ = [
    'setup_logging',
    'CustomJsonFormatter',
    'ContextTextFormatter'
]
