from dataclasses import dataclass, field, replace
from typing import List, Optional
import logging
import math

import torch

from splat_graph.core.constants import PoseProvenance
from splat_graph.core.errors import PoseError, TemplateError, ValidationError
from splat_graph.models.geometry import quat_slerp

logger = logging.getLogger(__name__)

SKINNING_TOLERANCE = 1e-6


@dataclass(eq=False)
class ArticulatedTemplate:
    """Skinned body template with a joint tree"""
    name: str
    vertices: torch.Tensor  # (V, 3) rest pose
    faces: torch.Tensor  # (F, 3) long
    joints: torch.Tensor  # (K, 3)
    parents: List[int]  # -1 for root
    skinning: torch.Tensor  # (K, V), columns sum to 1
    shape_basis: torch.Tensor  # (S, V, 3)
    pose_basis: Optional[torch.Tensor] = None  # (9 * (K - 1), V, 3)
    joint_regressor: Optional[torch.Tensor] = None  # (K, V)
    order: List[int] = field(init=False)

    def __post_init__(self):
        V = self.vertices.shape[0]
        K = self.joints.shape[0]
        if len(self.parents) != K:
            raise TemplateError(f"Template has {K} joints but {len(self.parents)} parent entries", self.name)
        if tuple(self.skinning.shape) != (K, V):
            raise TemplateError(
                f"Skinning matrix has shape {tuple(self.skinning.shape)}, expected {(K, V)}", self.name
            )
        if bool((self.skinning < 0).any()):
            raise TemplateError("Skinning weights must be non-negative", self.name)
        sums = self.skinning.sum(dim=0)
        if V and float((sums - 1.0).abs().max()) > SKINNING_TOLERANCE:
            raise TemplateError("Skinning columns must sum to 1", self.name)
        if self.shape_basis.dim() != 3 or self.shape_basis.shape[1:] != (V, 3):
            raise TemplateError(f"Shape basis must be (S, {V}, 3)", self.name)
        if self.pose_basis is not None and tuple(self.pose_basis.shape) != (9 * (K - 1), V, 3):
            raise TemplateError(f"Pose basis must be ({9 * (K - 1)}, {V}, 3)", self.name)
        if self.joint_regressor is not None and tuple(self.joint_regressor.shape) != (K, V):
            raise TemplateError(f"Joint regressor must be ({K}, {V})", self.name)
        self.order = self._topological_order()

    def _topological_order(self) -> List[int]:
        roots = [k for k, p in enumerate(self.parents) if p == -1]
        if len(roots) != 1:
            raise TemplateError(f"Joint tree needs exactly one root, found {len(roots)}", self.name)
        children = {k: [] for k in range(len(self.parents))}
        for k, p in enumerate(self.parents):
            if p != -1:
                if not 0 <= p < len(self.parents):
                    raise TemplateError(f"Joint {k} has out-of-range parent {p}", self.name)
                children[p].append(k)
        order, queue = [], [roots[0]]
        while queue:
            k = queue.pop(0)
            order.append(k)
            queue.extend(children[k])
        if len(order) != len(self.parents):
            raise TemplateError("Joint hierarchy contains a cycle", self.name)
        return order

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]

    @property
    def shape_count(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def root(self) -> int:
        return self.order[0]

    def to(self, dtype: torch.dtype) -> "ArticulatedTemplate":
        def cast(x):
            return None if x is None else x.to(dtype)
        return ArticulatedTemplate(
            name=self.name,
            vertices=cast(self.vertices),
            faces=self.faces,
            joints=cast(self.joints),
            parents=list(self.parents),
            skinning=cast(self.skinning),
            shape_basis=cast(self.shape_basis),
            pose_basis=cast(self.pose_basis),
            joint_regressor=cast(self.joint_regressor)
        )


@dataclass(eq=False)
class BodyPoseSequence:
    """Per-frame joint rotations; root entry is the global orientation"""
    quats: torch.Tensor  # (T, K, 4)
    valid: torch.Tensor  # (T,) bool
    provenance: torch.Tensor  # (T,) int64

    def __post_init__(self):
        T = self.quats.shape[0]
        if self.valid.shape[0] != T or self.provenance.shape[0] != T:
            raise ValidationError("Body pose validity and provenance must span every frame", field='body_pose')

    @property
    def frame_count(self) -> int:
        return self.quats.shape[0]

    @property
    def joint_count(self) -> int:
        return self.quats.shape[1]

    @classmethod
    def rest(cls, frames: int, joints: int, dtype: Optional[torch.dtype] = None) -> "BodyPoseSequence":
        quats = torch.zeros(frames, joints, 4, dtype=dtype or torch.get_default_dtype())
        quats[..., 0] = 1.0
        return cls(
            quats=quats,
            valid=torch.ones(frames, dtype=torch.bool),
            provenance=torch.full((frames,), int(PoseProvenance.DETECTED), dtype=torch.long)
        )

    def valid_frames(self) -> List[int]:
        return torch.nonzero(self.valid).squeeze(-1).tolist()

    def at(self, t: float, node_id: Optional[str] = None) -> torch.Tensor:
        """(K, 4) rotations at a possibly fractional frame"""
        frames = self.valid_frames()
        if not frames:
            raise PoseError("Body pose sequence has no valid frame", node_id)
        lo = math.floor(t)
        if lo == t and 0 <= lo < self.frame_count and bool(self.valid[lo]):
            return self.quats[lo]
        before = [f for f in frames if f <= t]
        after = [f for f in frames if f >= t]
        if not before:
            return self.quats[after[0]]
        if not after:
            return self.quats[before[-1]]
        a, b = before[-1], after[0]
        if a == b:
            return self.quats[a]
        return quat_slerp(self.quats[a], self.quats[b], (t - a) / (b - a))

    def replace(self, **changes) -> "BodyPoseSequence":
        return replace(self, **changes)

    def clone(self) -> "BodyPoseSequence":
        return BodyPoseSequence(
            quats=self.quats.detach().clone(),
            valid=self.valid.clone(),
            provenance=self.provenance.clone()
        )


__all__ = ['ArticulatedTemplate', 'BodyPoseSequence']
