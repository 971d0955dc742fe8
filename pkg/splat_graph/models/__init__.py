from splat_graph.models.geometry import SE3Pose
from splat_graph.models.gaussians import GaussianSet
from splat_graph.models.camera import Camera
from splat_graph.models.human import ArticulatedTemplate, BodyPoseSequence
from splat_graph.models.scene import (
    EnvironmentMap,
    TrackedPose,
    SceneNode,
    SceneGraph
)
from splat_graph.models.dataset import (
    Tracklet3D,
    DetectedTracklet,
    DepthSamples,
    PoseInit,
    SceneDataset
)

__all__ = [
    'SE3Pose',
    'GaussianSet',
    'Camera',
    'ArticulatedTemplate',
    'BodyPoseSequence',
    'EnvironmentMap',
    'TrackedPose',
    'SceneNode',
    'SceneGraph',
    'Tracklet3D',
    'DetectedTracklet',
    'DepthSamples',
    'PoseInit',
    'SceneDataset'
]
