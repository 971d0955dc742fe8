from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator
from typing import List, Dict, Any, Optional, Sequence, Tuple
from pathlib import Path
import logging

import orjson

from splat_graph.core.errors import ConfigurationError
from splat_graph.utils.helpers import deep_update, parse_override_value

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process settings"""

    # Application
    APP_NAME: str = "splat-graph"
    VERSION: str = "1.0.0"
    ENVIRONMENT: str = Field(default="development")

    # Paths
    BASE_DIR: Path = Field(default=Path(__file__).parent.parent.parent)
    LOGS_DIR: Optional[Path] = None

    # Compute
    DEVICE: str = "cpu"
    TORCH_THREADS: Optional[int] = None

    # Monitoring
    PROMETHEUS_ENABLED: bool = False
    PROMETHEUS_PORT: int = 9090

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"
    LOG_FILE: Optional[str] = None

    # Formats
    CHECKPOINT_VERSION: int = 1
    DATASET_SCHEMA_VERSION: int = 1

    def configure_prometheus(self) -> None:
        """Expose Prometheus metrics over HTTP"""
        if self.PROMETHEUS_ENABLED:
            from prometheus_client import start_http_server
            from splat_graph.core.monitoring import metrics_manager
            start_http_server(self.PROMETHEUS_PORT, registry=metrics_manager.registry)

    def configure_torch(self) -> None:
        """Apply thread settings"""
        if self.TORCH_THREADS:
            import torch
            torch.set_num_threads(self.TORCH_THREADS)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore"
    )


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class TrainerConfig(_Section):
    lambda_r: float = Field(default=0.2, ge=0.0, le=1.0)
    lambda_depth: float = Field(default=0.1, ge=0.0)
    lambda_opacity: float = Field(default=0.05, ge=0.0)
    lambda_pose: float = Field(default=0.01, ge=0.0)
    lambda_scale_reg: float = Field(default=0.0, ge=0.0)
    dynamic_region_weight: float = Field(default=5.0, ge=0.0)
    pose_smooth_max_offset: int = Field(default=5, ge=1)
    iterations: int = Field(default=30000, ge=0)
    seed: int = 0
    eval_interval: int = Field(default=1000, ge=1)
    checkpoint_interval: int = Field(default=5000, ge=1)
    max_rejected_steps: int = Field(default=3, ge=1)
    # Hold every tenth frame out of training for novel-view evaluation
    holdout_test_frames: bool = True
    # Ablation switches
    optimize_box_poses: bool = True
    optimize_body_poses: bool = True
    use_lbs: bool = True
    use_deformation: bool = True


class DensifyConfig(_Section):
    grad_threshold: float = Field(default=3e-4, gt=0.0)
    scale_threshold: float = Field(default=3e-3, gt=0.0)
    interval: int = Field(default=100, gt=0)
    start: int = Field(default=500, ge=0)
    stop_fraction: float = Field(default=0.6, gt=0.0, le=1.0)
    opacity_reset_interval: int = Field(default=3000, gt=0)
    opacity_reset_value: float = Field(default=0.01, gt=0.0, lt=1.0)
    prune_opacity: float = Field(default=0.005, gt=0.0, lt=1.0)
    split_factor: float = Field(default=1.6, gt=1.0)
    max_blobs: float = Field(default=2e6, gt=0.0)


class Schedule(_Section):
    """Exponential decay from initial to final"""
    initial: float = Field(ge=0.0)
    final: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def check_bounds(self) -> "Schedule":
        if self.final is not None and self.final > self.initial:
            raise ValueError("final learning rate must not exceed the initial one")
        return self

    def at(self, iteration: int, total: int) -> float:
        """lr(i) = lr0 * (lrf / lr0) ** (i / total)"""
        final = self.initial if self.final is None else self.final
        if total <= 0 or final == self.initial:
            return self.initial
        progress = min(max(iteration / total, 0.0), 1.0)
        if final == 0.0:
            return self.initial * (1.0 - progress)
        return self.initial * (final / self.initial) ** progress


class LearningRateConfig(_Section):
    means: Schedule = Field(default_factory=lambda: Schedule(initial=1.6e-4, final=1.6e-6))
    opacity: Schedule = Field(default_factory=lambda: Schedule(initial=0.05))
    scales: Schedule = Field(default_factory=lambda: Schedule(initial=5e-3))
    sh_dc: Schedule = Field(default_factory=lambda: Schedule(initial=2.5e-3))
    sh_rest: Schedule = Field(default_factory=lambda: Schedule(initial=2.5e-3 / 20.0))
    rotation_articulated: Schedule = Field(default_factory=lambda: Schedule(initial=5e-5))
    rotation_default: Schedule = Field(default_factory=lambda: Schedule(initial=1e-5))
    box_rotation: Schedule = Field(default_factory=lambda: Schedule(initial=1e-5, final=5e-6))
    box_translation: Schedule = Field(default_factory=lambda: Schedule(initial=5e-4, final=1e-4))
    body_pose: Schedule = Field(default_factory=lambda: Schedule(initial=5e-5, final=1e-5))
    skinning: Schedule = Field(default_factory=lambda: Schedule(initial=1e-4))
    deformation_net: Schedule = Field(default_factory=lambda: Schedule(initial=8e-4, final=1.6e-6))
    embedding: Schedule = Field(default_factory=lambda: Schedule(initial=1e-3))
    sky: Schedule = Field(default_factory=lambda: Schedule(initial=1e-2))


class ModelConfig(_Section):
    sh_degree_background: int = Field(default=3, ge=0, le=3)
    sh_degree_rigid: int = Field(default=3, ge=0, le=3)
    sh_degree_deformable: int = Field(default=3, ge=0, le=3)
    sh_degree_articulated: int = Field(default=1, ge=0, le=3)
    env_map_height: int = Field(default=256, ge=2)
    env_map_width: int = Field(default=512, ge=2)
    deform_hidden: int = Field(default=128, gt=0)
    deform_layers: int = Field(default=4, gt=0)
    deform_position_bands: int = Field(default=8, ge=0)
    deform_time_bands: int = Field(default=6, ge=0)
    embedding_dim: int = Field(default=16, gt=0)


class InitConfig(_Section):
    lidar_points: int = Field(default=600000, ge=0)
    near_points: int = Field(default=200000, ge=0)
    far_points: int = Field(default=200000, ge=0)
    budget_scale: float = Field(default=1.0, gt=0.0)
    far_radius_factor: float = Field(default=10.0, gt=1.0)
    node_fallback_points: int = Field(default=100, gt=0)


class PosePrepConfig(_Section):
    match_threshold: float = Field(default=0.3, ge=0.0, le=1.0)
    # Fixed rotation taking template axes to the box frame (w, x, y, z)
    body_alignment: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)


class ExperimentConfig(_Section):
    """Full experiment config"""
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    densify: DensifyConfig = Field(default_factory=DensifyConfig)
    lr: LearningRateConfig = Field(default_factory=LearningRateConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    pose_prep: PosePrepConfig = Field(default_factory=PosePrepConfig)

    @property
    def densify_stop(self) -> int:
        return int(self.densify.stop_fraction * self.trainer.iterations)

    @property
    def blob_ceiling(self) -> int:
        return int(round(self.densify.max_blobs * self.init.budget_scale))

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def valid_keys(model: type = ExperimentConfig, prefix: str = "") -> List[str]:
    """All dotted config keys"""
    keys = []
    for name, field in model.model_fields.items():
        annotation = field.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            keys.extend(valid_keys(annotation, f"{prefix}{name}."))
        else:
            keys.append(f"{prefix}{name}")
    return keys


def parse_overrides(overrides: Sequence[str]) -> Dict[str, Any]:
    """Turn key=value strings into a nested dict"""
    nested: Dict[str, Any] = {}
    known = set(valid_keys())
    for item in overrides:
        if '=' not in item:
            raise ConfigurationError(f"Override '{item}' is not of the form key=value", valid_keys())
        key, raw = item.split('=', 1)
        key = key.strip()
        if key not in known:
            raise ConfigurationError(
                f"Unknown config key '{key}'. Valid keys: {', '.join(valid_keys())}",
                valid_keys()
            )
        node = nested
        parts = key.split('.')
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = parse_override_value(raw)
    return nested


def load_experiment_config(
    path: Optional[Path] = None,
    overrides: Sequence[str] = ()
) -> ExperimentConfig:
    """Load a JSON config file and apply dotted overrides"""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = orjson.loads(Path(path).read_bytes())
        except FileNotFoundError:
            raise ConfigurationError(f"Config file not found: {path}")
        except orjson.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")

    data = deep_update(data, parse_overrides(overrides))

    try:
        return ExperimentConfig.model_validate(data)
    except PydanticValidationError as e:
        unknown = [
            '.'.join(str(p) for p in err['loc'])
            for err in e.errors() if err['type'] == 'extra_forbidden'
        ]
        if unknown:
            raise ConfigurationError(
                f"Unknown config keys {unknown}. Valid keys: {', '.join(valid_keys())}",
                valid_keys()
            )
        raise ConfigurationError(f"Invalid config: {e}", valid_keys())


def save_experiment_config(config: ExperimentConfig, path: Path) -> None:
    """Write the resolved config next to run outputs"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(config.to_dict(), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))


# Create settings instance
settings = Settings()

if settings.LOGS_DIR is not None:
    settings.LOGS_DIR.mkdir(parents=True, exist_ok=True)

__all__ = [
    'Settings',
    'settings',
    'ExperimentConfig',
    'TrainerConfig',
    'DensifyConfig',
    'LearningRateConfig',
    'ModelConfig',
    'InitConfig',
    'PosePrepConfig',
    'Schedule',
    'valid_keys',
    'parse_overrides',
    'load_experiment_config',
    'save_experiment_config'
]
