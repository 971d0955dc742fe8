from dataclasses import dataclass, fields, replace
from typing import Dict, Optional, Sequence
import logging
import math

import torch

from splat_graph.core.constants import SourceTag
from splat_graph.core.errors import ValidationError
from splat_graph.models.geometry import SE3Pose, apply_matrix, matmul3, quat_multiply, quat_normalize, quat_to_matrix
from splat_graph.utils.validators import validator

logger = logging.getLogger(__name__)

# Columns that carry per-blob learnable values
PARAM_COLUMNS = ('opacity_logit', 'means', 'quats', 'log_scales', 'sh_dc', 'sh_rest')


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_of(coeff_count: int) -> int:
    degree = int(round(math.sqrt(coeff_count))) - 1
    if sh_coeff_count(degree) != coeff_count or not 0 <= degree <= 3:
        raise ValidationError(f"SH block of {coeff_count} coefficients matches no degree in 0..3", field='sh')
    return degree


def inverse_sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x / (1.0 - x))


@dataclass(frozen=True, eq=False)
class GaussianSet:
    """Columnar blob store, values kept pre-activation"""
    opacity_logit: torch.Tensor  # (N,)
    means: torch.Tensor  # (N, 3)
    quats: torch.Tensor  # (N, 4) w, x, y, z, unnormalized
    log_scales: torch.Tensor  # (N, 3)
    sh_dc: torch.Tensor  # (N, 1, 3)
    sh_rest: torch.Tensor  # (N, K-1, 3)
    source_tag: torch.Tensor  # (N,) int64

    def __post_init__(self):
        n = self.means.shape[0]
        for f in fields(self):
            column = getattr(self, f.name)
            validator.same_length(column.shape[0], n, f"GaussianSet.{f.name}")
        validator.last_dim(self.means, 3, 'means')
        validator.last_dim(self.quats, 4, 'quats')
        validator.last_dim(self.log_scales, 3, 'log_scales')

    @property
    def count(self) -> int:
        return self.means.shape[0]

    def __len__(self) -> int:
        return self.count

    @property
    def sh_degree(self) -> int:
        return sh_degree_of(1 + self.sh_rest.shape[1])

    @property
    def dtype(self) -> torch.dtype:
        return self.means.dtype

    @property
    def device(self) -> torch.device:
        return self.means.device

    @property
    def opacity(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logit)

    @property
    def scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales)

    @property
    def rotations(self) -> torch.Tensor:
        return quat_normalize(self.quats)

    @property
    def sh(self) -> torch.Tensor:
        return torch.cat([self.sh_dc, self.sh_rest], dim=1)

    def replace(self, **changes) -> "GaussianSet":
        return replace(self, **changes)

    def columns(self) -> Dict[str, torch.Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def select(self, index: torch.Tensor) -> "GaussianSet":
        """Subset by boolean mask or index tensor"""
        return GaussianSet(**{name: column[index] for name, column in self.columns().items()})

    def pad_sh(self, degree: int) -> "GaussianSet":
        """Zero-pad higher SH bands up to degree"""
        rest = sh_coeff_count(degree) - 1
        have = self.sh_rest.shape[1]
        if have == rest:
            return self
        if have > rest:
            raise ValidationError(f"Cannot pad SH degree {self.sh_degree} down to {degree}", field='sh')
        pad = self.sh_rest.new_zeros((self.count, rest - have, 3))
        return self.replace(sh_rest=torch.cat([self.sh_rest, pad], dim=1))

    def detach(self) -> "GaussianSet":
        return GaussianSet(**{name: column.detach() for name, column in self.columns().items()})

    def clone(self) -> "GaussianSet":
        return GaussianSet(**{name: column.detach().clone() for name, column in self.columns().items()})

    def to(self, dtype: Optional[torch.dtype] = None, device=None) -> "GaussianSet":
        moved = {}
        for name, column in self.columns().items():
            if name == 'source_tag':
                moved[name] = column.to(device=device)
            else:
                moved[name] = column.to(dtype=dtype, device=device)
        return GaussianSet(**moved)

    def with_tag(self, tag: SourceTag) -> "GaussianSet":
        return self.replace(source_tag=torch.full_like(self.source_tag, int(tag)))

    @classmethod
    def empty(cls, degree: int = 0, dtype: Optional[torch.dtype] = None, device=None) -> "GaussianSet":
        dtype = dtype or torch.get_default_dtype()
        return cls(
            opacity_logit=torch.zeros(0, dtype=dtype, device=device),
            means=torch.zeros(0, 3, dtype=dtype, device=device),
            quats=torch.zeros(0, 4, dtype=dtype, device=device),
            log_scales=torch.zeros(0, 3, dtype=dtype, device=device),
            sh_dc=torch.zeros(0, 1, 3, dtype=dtype, device=device),
            sh_rest=torch.zeros(0, sh_coeff_count(degree) - 1, 3, dtype=dtype, device=device),
            source_tag=torch.zeros(0, dtype=torch.long, device=device)
        )

    @classmethod
    def from_points(
        cls,
        points: torch.Tensor,
        colors: torch.Tensor,
        scales: torch.Tensor,
        opacity: float = 0.1,
        degree: int = 3,
        tag: SourceTag = SourceTag.BACKGROUND
    ) -> "GaussianSet":
        """Isotropic blobs with DC color from rgb"""
        from splat_graph.services.sh import rgb_to_sh

        n = points.shape[0]
        dtype = points.dtype
        if scales.dim() == 1:
            scales = scales.unsqueeze(-1).expand(n, 3)
        quats = torch.zeros(n, 4, dtype=dtype, device=points.device)
        quats[:, 0] = 1.0
        return cls(
            opacity_logit=inverse_sigmoid(torch.full((n,), opacity, dtype=dtype, device=points.device)),
            means=points.clone(),
            quats=quats,
            log_scales=torch.log(scales.clamp_min(1e-7)).to(dtype),
            sh_dc=rgb_to_sh(colors.to(dtype)).unsqueeze(1),
            sh_rest=torch.zeros(n, sh_coeff_count(degree) - 1, 3, dtype=dtype, device=points.device),
            source_tag=torch.full((n,), int(tag), dtype=torch.long, device=points.device)
        )

    @classmethod
    def concatenate(cls, sets: Sequence["GaussianSet"]) -> "GaussianSet":
        """Concatenate sets, padding SH to the highest degree present"""
        sets = [s for s in sets if s is not None]
        if not sets:
            return cls.empty()
        degree = max(s.sh_degree for s in sets)
        padded = [s.pad_sh(degree) for s in sets]
        if len(padded) == 1:
            return padded[0]
        return cls(**{
            name: torch.cat([s.columns()[name] for s in padded], dim=0)
            for name in padded[0].columns()
        })


def build_covariance(scales: torch.Tensor, quats: torch.Tensor) -> torch.Tensor:
    """Σ = R diag(s)² Rᵀ for activated scales"""
    validator.finite(scales, 'scales')
    validator.finite(quats, 'quats')
    R = quat_to_matrix(quats)
    M = R * scales.unsqueeze(-2)
    return matmul3(M, M.transpose(-1, -2))


def se3_transform_set(pose: SE3Pose, gaussians: GaussianSet) -> GaussianSet:
    """Move every blob by a rigid pose; opacity, scale and color untouched"""
    R = pose.rotation_matrix.to(gaussians.dtype)
    t = pose.translation.to(gaussians.dtype)
    q = pose.rotation.to(gaussians.dtype).expand(gaussians.count, 4)
    return gaussians.replace(
        means=apply_matrix(R, gaussians.means) + t,
        quats=quat_multiply(q, gaussians.quats)
    )


__all__ = [
    'GaussianSet',
    'PARAM_COLUMNS',
    'build_covariance',
    'se3_transform_set',
    'sh_coeff_count',
    'sh_degree_of',
    'inverse_sigmoid'
]
