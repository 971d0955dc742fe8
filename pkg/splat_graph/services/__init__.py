from splat_graph.services.deformation import DeformationNet
from splat_graph.services.optimizer import SceneOptimizer
from splat_graph.services.densification import DensityController
from splat_graph.services.pose_pipeline import PosePrepService
from splat_graph.services.metrics import MetricsTable
from splat_graph.services.trainer import Trainer

__all__ = [
    'DeformationNet',
    'SceneOptimizer',
    'DensityController',
    'PosePrepService',
    'MetricsTable',
    'Trainer'
]
