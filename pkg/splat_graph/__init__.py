from splat_graph.core.config import settings
from splat_graph.core.monitoring import metrics_manager
from splat_graph.models import (
    Camera,
    GaussianSet,
    SceneDataset,
    SceneGraph,
    SceneNode
)
from splat_graph.services import (
    DeformationNet,
    SceneOptimizer,
    DensityController,
    PosePrepService,
    MetricsTable,
    Trainer
)

__version__ = "1.0.0"

__all__ = [
    'settings',
    'metrics_manager',
    # Models
    'Camera',
    'GaussianSet',
    'SceneDataset',
    'SceneGraph',
    'SceneNode',
    # Services
    'DeformationNet',
    'SceneOptimizer',
    'DensityController',
    'PosePrepService',
    'MetricsTable',
    'Trainer'
]
