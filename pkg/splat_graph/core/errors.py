from typing import Optional, Dict, Any
import logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_RUNTIME_ERROR = 3


class SplatError(Exception):
    """Base error class"""
    def __init__(
        self,
        message: str,
        details: Optional[Dict[str, Any]] = None,
        exit_code: int = EXIT_RUNTIME_ERROR
    ):
        super().__init__(message)
        self.message = message
        self.details = details or {}
        self.exit_code = exit_code


class ValidationError(SplatError):
    """Invalid numeric input"""
    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        details: Optional[Dict] = None
    ):
        super().__init__(
            message=message,
            details={
                'field': field,
                **(details or {})
            },
            exit_code=EXIT_INPUT_ERROR
        )


class ConfigurationError(SplatError):
    """Configuration error"""
    def __init__(self, message: str = "Configuration error", valid_keys: Optional[list] = None):
        super().__init__(
            message=message,
            details={'valid_keys': valid_keys or []},
            exit_code=EXIT_INPUT_ERROR
        )


class DatasetError(SplatError):
    """Dataset on disk is missing, malformed or out of bounds"""
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(
            message=message,
            details={'path': path},
            exit_code=EXIT_INPUT_ERROR
        )


class TemplateError(SplatError):
    """Articulated template violates its invariants"""
    def __init__(self, message: str, template: Optional[str] = None):
        super().__init__(
            message=message,
            details={'template': template},
            exit_code=EXIT_INPUT_ERROR
        )


class CheckpointError(SplatError):
    """Checkpoint version or checksum error"""
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(
            message=message,
            details={'path': path},
            exit_code=EXIT_INPUT_ERROR
        )


class PoseError(SplatError):
    """No usable pose for a node"""
    def __init__(self, message: str, node_id: Optional[str] = None):
        super().__init__(
            message=message,
            details={'node_id': node_id},
            exit_code=EXIT_RUNTIME_ERROR
        )


class EditError(SplatError):
    """Scene edit rejected"""
    def __init__(self, message: str, op: Optional[str] = None, node_id: Optional[str] = None):
        super().__init__(
            message=message,
            details={'op': op, 'node_id': node_id},
            exit_code=EXIT_INPUT_ERROR
        )


class SyntheticSpecError(SplatError):
    """Synthetic scene spec is invalid"""
    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(
            message=message,
            details={'field': field},
            exit_code=EXIT_INPUT_ERROR
        )


class MetricError(SplatError):
    """Metric cannot be computed"""
    def __init__(self, message: str, metric: Optional[str] = None):
        super().__init__(
            message=message,
            details={'metric': metric},
            exit_code=EXIT_RUNTIME_ERROR
        )


class TrainingDivergedError(SplatError):
    """Too many consecutive rejected steps"""
    def __init__(self, iteration: int, rejected: int):
        super().__init__(
            message=f"Training diverged at iteration {iteration} after {rejected} rejected steps",
            details={'iteration': iteration, 'rejected': rejected},
            exit_code=EXIT_RUNTIME_ERROR
        )


def error_handler(error: Exception) -> int:
    """Global error handler, returns the process exit code"""
    if isinstance(error, SplatError):
        logger.error(
            f"{type(error).__name__}: {error.message}",
            extra={
                'error_type': type(error).__name__,
                'details': error.details
            }
        )
        return error.exit_code

    # Handle unknown errors
    logger.error(f"Unexpected error: {str(error)}", exc_info=True)
    return EXIT_RUNTIME_ERROR


__all__ = [
    'EXIT_OK',
    'EXIT_INPUT_ERROR',
    'EXIT_RUNTIME_ERROR',
    'SplatError',
    'ValidationError',
    'ConfigurationError',
    'DatasetError',
    'TemplateError',
    'CheckpointError',
    'PoseError',
    'EditError',
    'SyntheticSpecError',
    'MetricError',
    'TrainingDivergedError',
    'error_handler'
]
