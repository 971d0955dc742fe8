from dataclasses import dataclass
from typing import Optional, Tuple
import logging
import math

import torch
import torch.nn as nn

from splat_graph.core.errors import ValidationError
from splat_graph.models.gaussians import GaussianSet

logger = logging.getLogger(__name__)

OUTPUT_DIM = 10  # δμ 3, δq 4, δs 3


def positional_encoding(x: torch.Tensor, bands: int) -> torch.Tensor:
    """[x, sin(2^i π x), cos(2^i π x)] for i < bands"""
    if bands == 0:
        return x
    freqs = (2.0 ** torch.arange(bands, dtype=x.dtype, device=x.device)) * math.pi
    angles = x.unsqueeze(-1) * freqs
    encoded = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1).flatten(-2)
    return torch.cat([x, encoded], dim=-1)


class DeformationNet(nn.Module):
    """Shared MLP producing per-blob deltas from (anchor, embedding, time)"""

    def __init__(
        self,
        embedding_dim: int = 16,
        hidden: int = 128,
        layers: int = 4,
        position_bands: int = 8,
        time_bands: int = 6
    ):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.hidden = hidden
        self.layers = layers
        self.position_bands = position_bands
        self.time_bands = time_bands

        in_dim = 3 * (1 + 2 * position_bands) + embedding_dim + (1 + 2 * time_bands)
        modules = []
        width = in_dim
        for _ in range(layers):
            modules += [nn.Linear(width, hidden), nn.SiLU()]
            width = hidden
        self.trunk = nn.Sequential(*modules)
        self.head = nn.Linear(width, OUTPUT_DIM)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @classmethod
    def seeded(cls, seed: int, dtype: Optional[torch.dtype] = None, **kwargs) -> "DeformationNet":
        """Construct with weights drawn from a private RNG stream"""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            net = cls(**kwargs)
        return net.to(dtype) if dtype is not None else net

    def hyperparameters(self) -> dict:
        return {
            'embedding_dim': self.embedding_dim,
            'hidden': self.hidden,
            'layers': self.layers,
            'position_bands': self.position_bands,
            'time_bands': self.time_bands
        }

    def randomize_head(self, scale: float, seed: int) -> None:
        """Give the output layer small random weights"""
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            w = torch.randn(self.head.weight.shape, generator=generator, dtype=torch.float64)
            self.head.weight.copy_((w * scale / math.sqrt(self.hidden)).to(self.head.weight.dtype))
            self.head.bias.zero_()

    def encode(self, anchors: torch.Tensor, embedding: torch.Tensor, t: float) -> torch.Tensor:
        n = anchors.shape[0]
        time = torch.full((n, 1), float(t), dtype=anchors.dtype, device=anchors.device)
        return torch.cat([
            positional_encoding(anchors, self.position_bands),
            embedding.to(anchors.dtype).unsqueeze(0).expand(n, -1),
            positional_encoding(time, self.time_bands)
        ], dim=-1)

    def forward(self, anchors: torch.Tensor, embedding: torch.Tensor, t: float) -> torch.Tensor:
        return self.head(self.trunk(self.encode(anchors, embedding, t)))


@dataclass
class Deltas:
    means: torch.Tensor  # (N, 3)
    quats: torch.Tensor  # (N, 4)
    log_scales: torch.Tensor  # (N, 3)

    @property
    def count(self) -> int:
        return self.means.shape[0]

    @classmethod
    def zeros(cls, n: int, dtype: Optional[torch.dtype] = None) -> "Deltas":
        dtype = dtype or torch.get_default_dtype()
        return cls(torch.zeros(n, 3, dtype=dtype), torch.zeros(n, 4, dtype=dtype), torch.zeros(n, 3, dtype=dtype))


def normalize_anchors(anchors: torch.Tensor, box: Tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
    """Map anchors into the unit box of the node's initial extent"""
    center, half = box
    return (anchors - center.to(anchors.dtype)) / half.to(anchors.dtype).clamp_min(1e-6)


def check_weights(net: DeformationNet) -> None:
    for name, param in net.named_parameters():
        if not bool(torch.isfinite(param).all()):
            raise ValidationError(f"Deformation net weight {name} is non-finite", field=name)


def deform_query(
    net: DeformationNet,
    anchors: torch.Tensor,
    embedding: torch.Tensor,
    t: float
) -> Deltas:
    """Per-blob deltas; anchors are normalized and detached from geometry"""
    check_weights(net)
    dtype = next(net.parameters()).dtype
    out = net(anchors.detach().to(dtype), embedding, t)
    return Deltas(means=out[:, 0:3], quats=out[:, 3:7], log_scales=out[:, 7:10])


def apply_deltas(canonical: GaussianSet, deltas: Deltas) -> GaussianSet:
    """Add deltas to means, raw quaternion components and log-scales"""
    if deltas.count != canonical.count:
        raise ValidationError(
            f"Got {deltas.count} deltas for {canonical.count} blobs", field='deltas'
        )
    dtype = canonical.dtype
    return canonical.replace(
        means=canonical.means + deltas.means.to(dtype),
        quats=canonical.quats + deltas.quats.to(dtype),
        log_scales=canonical.log_scales + deltas.log_scales.to(dtype)
    )


__all__ = [
    'DeformationNet',
    'Deltas',
    'positional_encoding',
    'normalize_anchors',
    'deform_query',
    'apply_deltas'
]
