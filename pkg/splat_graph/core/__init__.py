from splat_graph.core.config import settings, ExperimentConfig, load_experiment_config
from splat_graph.core.monitoring import metrics_manager
from splat_graph.core.cache import ray_cache
from splat_graph.core.errors import (
    SplatError,
    ValidationError,
    ConfigurationError,
    DatasetError,
    CheckpointError,
    EditError,
    TrainingDivergedError,
    error_handler
)

__all__ = [
    'settings',
    'ExperimentConfig',
    'load_experiment_config',
    'metrics_manager',
    'ray_cache',
    'SplatError',
    'ValidationError',
    'ConfigurationError',
    'DatasetError',
    'CheckpointError',
    'EditError',
    'TrainingDivergedError',
    'error_handler'
]
