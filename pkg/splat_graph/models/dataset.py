from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging
import math

import numpy as np
import torch

from splat_graph.core.constants import (
    DEFORMABLE_LABELS,
    HUMAN_LABELS,
    RIGID_LABELS,
    NodeKind
)
from splat_graph.core.errors import DatasetError
from splat_graph.models.camera import Camera
from splat_graph.models.geometry import SE3Pose
from splat_graph.models.human import ArticulatedTemplate, BodyPoseSequence

logger = logging.getLogger(__name__)

FrameKey = Tuple[int, int]  # (camera_id, frame)

# Corner signs of a unit box, x along length, y along width, z along height
BOX_CORNER_SIGNS = np.array([
    [sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)
], dtype=np.float64)


def kind_for_label(label: str) -> NodeKind:
    label = label.lower()
    if label in RIGID_LABELS:
        return NodeKind.RIGID
    if label in HUMAN_LABELS:
        return NodeKind.ARTICULATED
    if label in DEFORMABLE_LABELS:
        return NodeKind.DEFORMABLE
    return NodeKind.DEFORMABLE


@dataclass(eq=False)
class Tracklet3D:
    """Oriented world boxes over the timeline; yaw about +z, dims (l, w, h)"""
    track_id: str
    label: str
    centers: np.ndarray  # (T, 3)
    yaws: np.ndarray  # (T,)
    dims: np.ndarray  # (T, 3)
    valid: np.ndarray  # (T,) bool

    def __post_init__(self):
        T = self.centers.shape[0]
        if not (self.yaws.shape[0] == self.dims.shape[0] == self.valid.shape[0] == T):
            raise DatasetError(f"Tracklet {self.track_id} columns differ in length")
        if bool((self.dims[self.valid] <= 0).any()):
            raise DatasetError(f"Tracklet {self.track_id} has non-positive dimensions on a valid frame")

    @property
    def frame_count(self) -> int:
        return self.centers.shape[0]

    @property
    def kind(self) -> NodeKind:
        return kind_for_label(self.label)

    def valid_frames(self) -> List[int]:
        return np.nonzero(self.valid)[0].tolist()

    def box_pose(self, frame: int, dtype: Optional[torch.dtype] = None) -> SE3Pose:
        """Box-to-world transform"""
        dtype = dtype or torch.get_default_dtype()
        return SE3Pose.from_yaw(
            torch.tensor(float(self.yaws[frame]), dtype=dtype),
            torch.tensor(self.centers[frame], dtype=dtype)
        )

    def corners(self, frame: int) -> np.ndarray:
        """(8, 3) world corners"""
        half = 0.5 * self.dims[frame]
        local = BOX_CORNER_SIGNS * half
        c, s = np.cos(self.yaws[frame]), np.sin(self.yaws[frame])
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return local @ R.T + self.centers[frame]

    def contains(self, points: np.ndarray, frame: int, margin: float = 0.0) -> np.ndarray:
        """Mask of points inside the box at a frame"""
        c, s = np.cos(self.yaws[frame]), np.sin(self.yaws[frame])
        d = points - self.centers[frame]
        local = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=-1)
        half = 0.5 * self.dims[frame] + margin
        return np.all(np.abs(local) <= half, axis=-1)

    def to_local(self, points: np.ndarray, frame: int) -> np.ndarray:
        c, s = np.cos(self.yaws[frame]), np.sin(self.yaws[frame])
        d = points - self.centers[frame]
        return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=-1)

    def mean_speed(self, timestamps: np.ndarray) -> float:
        """Mean speed over consecutive valid frames, m/s"""
        frames = self.valid_frames()
        speeds = []
        for a, b in zip(frames[:-1], frames[1:]):
            dt = float(timestamps[b] - timestamps[a])
            if dt > 0:
                speeds.append(float(np.linalg.norm(self.centers[b] - self.centers[a])) / dt)
        return float(np.mean(speeds)) if speeds else 0.0


@dataclass(eq=False)
class DetectedTracklet:
    """Per-camera 2D boxes (x0, y0, x1, y1) and predicted body poses"""
    camera_id: int
    det_id: str
    boxes: np.ndarray  # (T, 4)
    box_valid: np.ndarray  # (T,) bool
    poses: np.ndarray  # (T, K, 4)
    pose_valid: np.ndarray  # (T,) bool

    def __post_init__(self):
        if bool((self.pose_valid & ~self.box_valid).any()):
            raise DatasetError(f"Detection {self.det_id} in camera {self.camera_id} has a pose without a box")

    @property
    def frame_count(self) -> int:
        return self.boxes.shape[0]

    def clamp(self, width: int, height: int) -> "DetectedTracklet":
        boxes = self.boxes.copy()
        boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, width)
        boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, height)
        return DetectedTracklet(self.camera_id, self.det_id, boxes, self.box_valid, self.poses, self.pose_valid)


@dataclass(eq=False)
class DepthSamples:
    """Sparse lidar returns seen from one camera: pixel (u, v) and range"""
    uv: np.ndarray  # (K, 2) float32
    ranges: np.ndarray  # (K,) float32

    @property
    def count(self) -> int:
        return self.uv.shape[0]

    @classmethod
    def empty(cls) -> "DepthSamples":
        return cls(np.zeros((0, 2), dtype=np.float32), np.zeros(0, dtype=np.float32))


@dataclass(eq=False)
class PoseInit:
    """Prepared body poses per human tracklet"""
    sequences: Dict[str, BodyPoseSequence] = field(default_factory=dict)
    demoted: List[str] = field(default_factory=list)
    matches: List[Dict[str, object]] = field(default_factory=list)


@dataclass(eq=False)
class SceneDataset:
    scene_id: str
    timestamps: np.ndarray  # (T,) seconds
    cameras: Dict[FrameKey, Camera]
    images: Dict[FrameKey, np.ndarray]  # (H, W, 3) float32 in [0, 1]
    depth: Dict[FrameKey, DepthSamples] = field(default_factory=dict)
    sky_masks: Dict[FrameKey, np.ndarray] = field(default_factory=dict)  # (H, W) bool
    semantic_masks: Dict[FrameKey, np.ndarray] = field(default_factory=dict)  # (H, W) uint8
    tracklets: List[Tracklet3D] = field(default_factory=list)
    detections: Dict[int, List[DetectedTracklet]] = field(default_factory=dict)
    poses_init: Optional[PoseInit] = None
    template: Optional[ArticulatedTemplate] = None
    schema_version: int = 1

    def __post_init__(self):
        if self.timestamps.shape[0] > 1 and not bool(np.all(np.diff(self.timestamps) > 0)):
            raise DatasetError("Timestamps must be strictly increasing")

    @property
    def frame_count(self) -> int:
        return self.timestamps.shape[0]

    @property
    def camera_ids(self) -> List[int]:
        return sorted({c for c, _ in self.cameras})

    @property
    def camera_count(self) -> int:
        return len(self.camera_ids)

    def camera(self, camera_id: int, frame: int) -> Camera:
        try:
            return self.cameras[(camera_id, frame)]
        except KeyError:
            raise DatasetError(f"No camera {camera_id} at frame {frame}")

    def camera_at(self, camera_id: int, t: float) -> Camera:
        """Camera at a fractional frame, extrinsics blended between neighbours"""
        t = min(max(float(t), 0.0), float(self.frame_count - 1))
        lo = int(math.floor(t))
        hi = min(lo + 1, self.frame_count - 1)
        if hi == lo or t == lo:
            return self.camera(camera_id, lo)
        return self.camera(camera_id, lo).interpolate(self.camera(camera_id, hi), t - lo)

    def image(self, camera_id: int, frame: int) -> np.ndarray:
        try:
            return self.images[(camera_id, frame)]
        except KeyError:
            raise DatasetError(f"No image for camera {camera_id} at frame {frame}")

    def tracklet(self, track_id: str) -> Tracklet3D:
        for tracklet in self.tracklets:
            if tracklet.track_id == track_id:
                return tracklet
        raise DatasetError(f"Unknown tracklet '{track_id}'")

    def humans(self) -> List[Tracklet3D]:
        return [t for t in self.tracklets if t.kind == NodeKind.ARTICULATED]

    def lidar_rays(self, camera_id: int, frame: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(origins, unit directions, ranges, pixel uv) of the depth samples"""
        samples = self.depth.get((camera_id, frame), DepthSamples.empty())
        camera = self.camera(camera_id, frame)
        origin = camera.center.detach().cpu().numpy().astype(np.float64)
        uv = samples.uv.astype(np.float64)
        rays = np.stack([
            (uv[:, 0] - camera.cx) / camera.fx,
            (uv[:, 1] - camera.cy) / camera.fy,
            np.ones(uv.shape[0])
        ], axis=-1)
        rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
        R = camera.world_to_camera.rotation_matrix.detach().cpu().numpy().astype(np.float64)
        directions = rays @ R
        origins = np.broadcast_to(origin, directions.shape).copy()
        return origins, directions, samples.ranges.astype(np.float64), samples.uv


__all__ = [
    'FrameKey',
    'Tracklet3D',
    'DetectedTracklet',
    'DepthSamples',
    'PoseInit',
    'SceneDataset',
    'kind_for_label',
    'BOX_CORNER_SIGNS'
]
