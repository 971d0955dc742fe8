from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple

import torch

from splat_graph.core.cache import ray_cache
from splat_graph.core.errors import ValidationError
from splat_graph.models.geometry import SE3Pose, as_tensor


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera, OpenCV axes, pixel centers at integer coordinates"""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: SE3Pose
    near: float = 0.05
    far: float = 1000.0
    camera_id: int = 0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"Focal lengths must be positive, got fx={self.fx} fy={self.fy}", field='camera')
        if not 0 < self.near < self.far:
            raise ValidationError(f"Need 0 < near < far, got near={self.near} far={self.far}", field='camera')
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"Invalid resolution {self.width}x{self.height}", field='camera')

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def dtype(self) -> torch.dtype:
        return self.world_to_camera.dtype

    @property
    def center(self) -> torch.Tensor:
        """Camera position in world"""
        return self.world_to_camera.inverse().translation

    def to_camera(self, points: torch.Tensor) -> torch.Tensor:
        return self.world_to_camera.apply(points)

    def project(self, points: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """World points -> (pixel uv, camera z)"""
        p = self.to_camera(points)
        z = p[..., 2]
        uv = torch.stack([self.fx * p[..., 0] / z + self.cx, self.fy * p[..., 1] / z + self.cy], dim=-1)
        return uv, z

    def camera_rays(self, dtype: Optional[torch.dtype] = None) -> torch.Tensor:
        """(H, W, 3) rays with unit z"""
        return ray_cache.pixel_rays(
            self.fx, self.fy, self.cx, self.cy, self.width, self.height,
            dtype=dtype or self.dtype
        )

    def world_directions(self, dtype: Optional[torch.dtype] = None) -> torch.Tensor:
        """(H, W, 3) unit view directions in world"""
        rays = self.camera_rays(dtype)
        rays = rays / rays.norm(dim=-1, keepdim=True)
        R = self.world_to_camera.rotation_matrix.to(rays.dtype)
        return rays @ R

    def interpolate(self, other: "Camera", w: float) -> "Camera":
        """Blend extrinsics, keep own intrinsics"""
        return replace(self, world_to_camera=self.world_to_camera.interpolate(other.world_to_camera, w))

    def to(self, dtype: Optional[torch.dtype] = None) -> "Camera":
        return replace(self, world_to_camera=self.world_to_camera.to(dtype=dtype))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'camera_id': self.camera_id,
            'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
            'width': self.width, 'height': self.height,
            'near': self.near, 'far': self.far,
            'world_to_camera': self.world_to_camera.to_dict()
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], dtype: Optional[torch.dtype] = None) -> "Camera":
        pose = data['world_to_camera']
        if isinstance(pose, dict):
            world_to_camera = SE3Pose.from_dict(pose, dtype=dtype)
        else:
            world_to_camera = SE3Pose.from_matrix(as_tensor(pose, dtype=dtype))
        return cls(
            fx=float(data['fx']), fy=float(data['fy']),
            cx=float(data['cx']), cy=float(data['cy']),
            width=int(data['width']), height=int(data['height']),
            world_to_camera=world_to_camera,
            near=float(data.get('near', 0.05)),
            far=float(data.get('far', 1000.0)),
            camera_id=int(data.get('camera_id', 0))
        )


__all__ = ['Camera']
