import copy
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple
import logging
import math

import torch
import torch.nn.functional as F

from splat_graph.core.constants import NodeKind
from splat_graph.core.errors import EditError, ValidationError
from splat_graph.models.gaussians import GaussianSet
from splat_graph.models.geometry import SE3Pose, apply_matrix, axis_angle_to_quat, quat_multiply, quat_to_matrix
from splat_graph.models.human import ArticulatedTemplate, BodyPoseSequence

logger = logging.getLogger(__name__)


def inverse_softplus(x: torch.Tensor) -> torch.Tensor:
    return x + torch.log(-torch.expm1(-x))


@dataclass(eq=False)
class EnvironmentMap:
    """Equirectangular sky texture, texels kept pre-softplus"""
    texels: torch.Tensor  # (H_e, W_e, 3)

    def __post_init__(self):
        if self.texels.dim() != 3 or self.texels.shape[0] < 2 or self.texels.shape[1] < 2:
            raise ValidationError(
                f"Environment map must be at least 2x2x3, got {tuple(self.texels.shape)}", field='sky'
            )

    @classmethod
    def constant(cls, height: int, width: int, color, dtype: Optional[torch.dtype] = None) -> "EnvironmentMap":
        dtype = dtype or torch.get_default_dtype()
        rgb = torch.as_tensor(color, dtype=dtype).clamp_min(1e-6)
        return cls(inverse_softplus(rgb).expand(height, width, 3).clone())

    @property
    def height(self) -> int:
        return self.texels.shape[0]

    @property
    def width(self) -> int:
        return self.texels.shape[1]

    @property
    def colors(self) -> torch.Tensor:
        return F.softplus(self.texels)

    def texel_direction(self, row: int, col: int) -> torch.Tensor:
        """Unit direction through a texel center"""
        lon = (col + 0.5) / self.width * 2.0 * math.pi - math.pi
        lat = 0.5 * math.pi - (row + 0.5) / self.height * math.pi
        return torch.tensor(
            [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)],
            dtype=self.texels.dtype
        )

    def query(self, directions: torch.Tensor) -> torch.Tensor:
        """Bilinear lookup, longitude wraps and latitude clamps"""
        dirs = directions.to(self.texels.dtype)
        dirs = dirs / dirs.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        lon = torch.atan2(dirs[..., 1], dirs[..., 0])
        lat = torch.asin(dirs[..., 2].clamp(-1.0, 1.0))
        H, W = self.height, self.width

        u = (lon + math.pi) / (2.0 * math.pi) * W - 0.5
        v = ((0.5 * math.pi - lat) / math.pi * H - 0.5).clamp(0.0, H - 1.0)
        u0 = torch.floor(u)
        fu = (u - u0).unsqueeze(-1)
        u0 = u0.long() % W
        u1 = (u0 + 1) % W
        v0 = torch.floor(v).clamp(max=H - 2)
        fv = (v - v0).unsqueeze(-1)
        v0 = v0.long()
        v1 = v0 + 1

        colors = self.colors
        top = colors[v0, u0] * (1.0 - fu) + colors[v0, u1] * fu
        bottom = colors[v1, u0] * (1.0 - fu) + colors[v1, u1] * fu
        return top * (1.0 - fv) + bottom * fv

    def detached_leaf(self) -> "EnvironmentMap":
        return EnvironmentMap(self.texels.detach().clone().requires_grad_(True))

    def clone(self) -> "EnvironmentMap":
        return EnvironmentMap(self.texels.detach().clone())


@dataclass(eq=False)
class TrackedPose:
    """Per-frame base poses with right-multiplied learnable residuals"""
    base_rotation: torch.Tensor  # (T, 4)
    base_translation: torch.Tensor  # (T, 3)
    valid: torch.Tensor  # (T,) bool
    residual_rotation: torch.Tensor = None  # (T, 3) axis-angle
    residual_translation: torch.Tensor = None  # (T, 3)

    def __post_init__(self):
        T = self.base_translation.shape[0]
        if self.base_rotation.shape[0] != T or self.valid.shape[0] != T:
            raise ValidationError("Tracked pose columns must share the frame count", field='pose')
        if self.residual_rotation is None:
            self.residual_rotation = torch.zeros(T, 3, dtype=self.base_translation.dtype)
        if self.residual_translation is None:
            self.residual_translation = torch.zeros(T, 3, dtype=self.base_translation.dtype)

    @classmethod
    def from_poses(cls, poses: List[Optional[SE3Pose]], dtype: Optional[torch.dtype] = None) -> "TrackedPose":
        dtype = dtype or torch.get_default_dtype()
        identity = SE3Pose.identity(dtype)
        rot = torch.stack([(p or identity).rotation.to(dtype) for p in poses])
        trans = torch.stack([(p or identity).translation.to(dtype) for p in poses])
        valid = torch.tensor([p is not None for p in poses], dtype=torch.bool)
        return cls(rot, trans, valid)

    @classmethod
    def static(cls, pose: SE3Pose, frames: int) -> "TrackedPose":
        return cls(
            pose.rotation.expand(frames, 4).clone(),
            pose.translation.expand(frames, 3).clone(),
            torch.ones(frames, dtype=torch.bool)
        )

    @property
    def frame_count(self) -> int:
        return self.base_translation.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.base_translation.dtype

    def valid_frames(self) -> List[int]:
        return torch.nonzero(self.valid).squeeze(-1).tolist()

    def corrected_all(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """base ∘ exp(residual) for every frame"""
        q = quat_multiply(self.base_rotation, axis_angle_to_quat(self.residual_rotation))
        t = self.base_translation + apply_matrix(quat_to_matrix(self.base_rotation), self.residual_translation)
        return q, t

    def corrected(self, frame: int) -> SE3Pose:
        q = quat_multiply(self.base_rotation[frame], axis_angle_to_quat(self.residual_rotation[frame]))
        t = self.base_translation[frame] + apply_matrix(
            quat_to_matrix(self.base_rotation[frame]), self.residual_translation[frame]
        )
        return SE3Pose(q, t)

    def bake(self) -> "TrackedPose":
        """Fold residuals into the base poses and zero them"""
        with torch.no_grad():
            q, t = self.corrected_all()
        return TrackedPose(q.detach().clone(), t.detach().clone(), self.valid.clone())

    def clone(self) -> "TrackedPose":
        return TrackedPose(
            self.base_rotation.detach().clone(),
            self.base_translation.detach().clone(),
            self.valid.clone(),
            self.residual_rotation.detach().clone(),
            self.residual_translation.detach().clone()
        )


@dataclass(eq=False)
class SceneNode:
    node_id: str
    label: str
    kind: NodeKind
    payload: GaussianSet  # canonical, node-local frame
    pose: TrackedPose
    # articulated
    template: Optional[ArticulatedTemplate] = None
    betas: Optional[torch.Tensor] = None
    skin_logits: Optional[torch.Tensor] = None  # (N, K)
    body_pose: Optional[BodyPoseSequence] = None
    # deformable
    embedding: Optional[torch.Tensor] = None  # (E,)
    anchors: Optional[torch.Tensor] = None  # (N, 3) canonical means at creation
    anchor_box: Optional[Tuple[torch.Tensor, torch.Tensor]] = None  # center, half-extent
    deformation_net: Optional[torch.nn.Module] = None  # own net from a swap or insert, else the scene's

    def __post_init__(self):
        self.kind = NodeKind(self.kind)
        if self.kind == NodeKind.ARTICULATED:
            if self.template is None or self.skin_logits is None or self.body_pose is None:
                raise ValidationError(f"Articulated node {self.node_id} needs a template, skinning and body pose",
                                      field='node')
            if self.skin_logits.shape[0] != self.payload.count:
                raise ValidationError(f"Node {self.node_id}: skinning rows do not match blobs", field='skinning')
        if self.kind == NodeKind.DEFORMABLE:
            if self.embedding is None or self.anchors is None or self.anchor_box is None:
                raise ValidationError(f"Deformable node {self.node_id} needs an embedding and anchors", field='node')
            if self.anchors.shape[0] != self.payload.count:
                raise ValidationError(f"Node {self.node_id}: anchors do not match blobs", field='anchors')

    @property
    def frame_count(self) -> int:
        return self.pose.frame_count

    def clone(self) -> "SceneNode":
        def _copy(x):
            return None if x is None else x.detach().clone()
        return SceneNode(
            node_id=self.node_id,
            label=self.label,
            kind=self.kind,
            payload=self.payload.clone(),
            pose=self.pose.clone(),
            template=self.template,
            betas=_copy(self.betas),
            skin_logits=_copy(self.skin_logits),
            body_pose=self.body_pose.clone() if self.body_pose is not None else None,
            embedding=_copy(self.embedding),
            anchors=_copy(self.anchors),
            anchor_box=tuple(_copy(x) for x in self.anchor_box) if self.anchor_box is not None else None,
            deformation_net=copy.deepcopy(self.deformation_net) if self.deformation_net is not None else None
        )


@dataclass(eq=False)
class SceneGraph:
    """Background, sky and typed actor nodes over a frame timeline"""
    scene_id: str
    background: GaussianSet
    sky: Optional[EnvironmentMap]
    nodes: List[SceneNode]
    timestamps: torch.Tensor  # (T,) seconds, strictly increasing
    deformation_net: Optional[torch.nn.Module] = None
    scene_extent: float = 1.0
    use_lbs: bool = True
    use_deformation: bool = True
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(ids) != len(set(ids)):
            raise EditError("Node ids must be unique", op='build')
        for node in self.nodes:
            if node.frame_count != self.frame_count:
                raise EditError(
                    f"Node {node.node_id} spans {node.frame_count} frames, timeline has {self.frame_count}",
                    op='build', node_id=node.node_id
                )

    @property
    def frame_count(self) -> int:
        return self.timestamps.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.background.dtype

    def node_ids(self) -> List[str]:
        return [n.node_id for n in self.nodes]

    def node(self, node_id: str) -> SceneNode:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        raise EditError(f"Unknown node '{node_id}'", node_id=node_id)

    def has_node(self, node_id: str) -> bool:
        return node_id in self.node_ids()

    def net_for(self, node: SceneNode) -> Optional[torch.nn.Module]:
        """Deformation net that decodes this node's embedding"""
        return node.deformation_net if node.deformation_net is not None else self.deformation_net

    def normalized_time(self, t: float) -> float:
        """Frame index to [0, 1] by timestamp"""
        T = self.frame_count
        if T < 2:
            return 0.0
        ts = self.timestamps
        lo = min(max(int(math.floor(t)), 0), T - 1)
        hi = min(lo + 1, T - 1)
        w = min(max(t - lo, 0.0), 1.0)
        stamp = float(ts[lo]) * (1.0 - w) + float(ts[hi]) * w
        return (stamp - float(ts[0])) / max(float(ts[-1] - ts[0]), 1e-12)

    def replace(self, **changes) -> "SceneGraph":
        return replace(self, **changes)

    def clone(self) -> "SceneGraph":
        """Deep copy, deformation net included"""
        return SceneGraph(
            scene_id=self.scene_id,
            background=self.background.clone(),
            sky=self.sky.clone() if self.sky is not None else None,
            nodes=[n.clone() for n in self.nodes],
            timestamps=self.timestamps.clone(),
            deformation_net=copy.deepcopy(self.deformation_net) if self.deformation_net is not None else None,
            scene_extent=self.scene_extent,
            use_lbs=self.use_lbs,
            use_deformation=self.use_deformation,
            metadata=dict(self.metadata)
        )


__all__ = ['EnvironmentMap', 'TrackedPose', 'SceneNode', 'SceneGraph', 'inverse_softplus']
