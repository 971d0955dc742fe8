from dataclasses import dataclass, field
from typing import Dict, Optional
import logging

import numpy as np
import torch
import torch.nn.functional as F

from splat_graph.core.config import TrainerConfig
from splat_graph.core.constants import (
    DYNAMIC_MASK_THRESHOLD,
    MIN_LOSS_DEPTH,
    OPACITY_EPS,
    SSIM_C1,
    SSIM_C2,
    SSIM_SIGMA,
    SSIM_WINDOW,
    NodeKind
)
from splat_graph.core.errors import ValidationError
from splat_graph.models.gaussians import GaussianSet
from splat_graph.models.scene import SceneGraph
from splat_graph.services.rasterizer import RenderOutput

logger = logging.getLogger(__name__)


@dataclass
class FrameTarget:
    """Ground truth for one camera-frame"""
    image: torch.Tensor  # (H, W, 3)
    depth: Optional[torch.Tensor] = None  # (H, W) camera z, 0 where no return
    sky_mask: Optional[torch.Tensor] = None  # (H, W) bool

    @property
    def shape(self):
        return tuple(self.image.shape[:2])


@dataclass
class LossReport:
    total: torch.Tensor
    l1: torch.Tensor
    ssim: torch.Tensor
    depth: torch.Tensor
    opacity: torch.Tensor
    pose_smooth: torch.Tensor
    scale_reg: torch.Tensor
    weighted: Dict[str, torch.Tensor] = field(default_factory=dict)
    delta: int = 0

    @property
    def finite(self) -> bool:
        return bool(torch.isfinite(self.total))

    def as_dict(self) -> Dict[str, float]:
        values = {
            'total': self.total, 'l1': self.l1, 'ssim': self.ssim, 'depth': self.depth,
            'opacity': self.opacity, 'pose_smooth': self.pose_smooth, 'scale_reg': self.scale_reg
        }
        return {k: float(v.detach()) for k, v in values.items()}


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=None, device=None) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-coords ** 2 / (2.0 * sigma ** 2))
    g = g / g.sum()
    window = torch.outer(g, g)
    return window.to(dtype=dtype or torch.get_default_dtype(), device=device)


def ssim_map(img1: torch.Tensor, img2: torch.Tensor) -> torch.Tensor:
    """(H, W) SSIM averaged over channels, zero-padded Gaussian window"""
    if img1.shape != img2.shape:
        raise ValidationError(f"SSIM inputs differ in shape: {tuple(img1.shape)} vs {tuple(img2.shape)}",
                              field='image')
    x = img1.permute(2, 0, 1).unsqueeze(0)
    y = img2.permute(2, 0, 1).unsqueeze(0).to(x.dtype)
    channels = x.shape[1]
    window = gaussian_window(dtype=x.dtype, device=x.device).expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW)
    pad = SSIM_WINDOW // 2

    def blur(z: torch.Tensor) -> torch.Tensor:
        return F.conv2d(z, window, padding=pad, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    mu_x_sq, mu_y_sq, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    sigma_x_sq = blur(x * x) - mu_x_sq
    sigma_y_sq = blur(y * y) - mu_y_sq
    sigma_xy = blur(x * y) - mu_xy

    value = ((2.0 * mu_xy + SSIM_C1) * (2.0 * sigma_xy + SSIM_C2)) / (
        (mu_x_sq + mu_y_sq + SSIM_C1) * (sigma_x_sq + sigma_y_sq + SSIM_C2)
    )
    return value[0].mean(dim=0)


def dynamic_weights(dynamic_opacity: torch.Tensor, weight: float) -> torch.Tensor:
    """Per-pixel weight, `weight` where dynamic blobs dominate and 1 elsewhere"""
    mask = dynamic_opacity.detach() > DYNAMIC_MASK_THRESHOLD
    return torch.where(mask, torch.full_like(dynamic_opacity, weight), torch.ones_like(dynamic_opacity)).detach()


def l1_loss(color: torch.Tensor, target: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    return (weights.unsqueeze(-1) * (color - target).abs()).mean()


def ssim_loss(color: torch.Tensor, target: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    return (weights * (1.0 - ssim_map(color, target))).mean()


def depth_loss(rendered: torch.Tensor, sparse: torch.Tensor) -> torch.Tensor:
    """Σ over pixels with a return of |1/D_s - 1/D_r|, divided by h·w"""
    if rendered.shape != sparse.shape:
        raise ValidationError("Sparse depth and rendered depth differ in shape", field='depth')
    valid = sparse > 0
    inv_sparse = 1.0 / sparse.to(rendered.dtype).clamp_min(MIN_LOSS_DEPTH)
    inv_render = 1.0 / rendered.clamp_min(MIN_LOSS_DEPTH)
    diff = torch.where(valid, (inv_sparse - inv_render).abs(), torch.zeros_like(rendered))
    return diff.sum() / rendered.numel()


def opacity_loss(opacity: torch.Tensor, sky_mask: torch.Tensor) -> torch.Tensor:
    """-(1/hw)[Σ Ô log Ô + Σ M_sky log(1 - Ô)]"""
    if opacity.shape != sky_mask.shape:
        raise ValidationError("Sky mask and opacity map differ in shape", field='sky_mask')
    o = opacity.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS)
    sky = sky_mask.to(o.dtype)
    return -((o * torch.log(o)).sum() + (sky * torch.log(1.0 - o)).sum()) / o.numel()


def pose_smooth_loss(scene: SceneGraph, t: int, delta: int) -> torch.Tensor:
    """½‖θ(t-δ) + θ(t+δ) - 2θ(t)‖₁ summed over articulated nodes"""
    total = torch.zeros((), dtype=scene.dtype)
    for node in scene.nodes:
        if node.kind != NodeKind.ARTICULATED or node.body_pose is None:
            continue
        seq = node.body_pose
        a, b = t - delta, t + delta
        if a < 0 or b >= seq.frame_count:
            continue
        if not (bool(seq.valid[a]) and bool(seq.valid[t]) and bool(seq.valid[b])):
            continue
        q = seq.quats
        total = total + 0.5 * (q[a] + q[b] - 2.0 * q[t]).abs().sum().to(total.dtype)
    return total


def scale_regularizer(world: GaussianSet) -> torch.Tensor:
    """Mean of each blob's largest activated scale"""
    if world.count == 0:
        return torch.zeros((), dtype=world.dtype)
    return world.scales.max(dim=-1).values.mean()


def compute_losses(
    render: RenderOutput,
    target: FrameTarget,
    scene: SceneGraph,
    t: int,
    config: TrainerConfig,
    rng: Optional[np.random.Generator] = None,
    world: Optional[GaussianSet] = None
) -> LossReport:
    """Weighted image, depth, opacity and pose-smoothness objective"""
    color = render.color
    gt = target.image.to(color.dtype)
    if color.shape != gt.shape:
        raise ValidationError(f"Render {tuple(color.shape)} and image {tuple(gt.shape)} differ in shape",
                              field='image')
    zero = torch.zeros((), dtype=color.dtype)
    weights = dynamic_weights(render.dynamic_opacity, config.dynamic_region_weight)

    l1 = l1_loss(color, gt, weights)
    ssim_term = ssim_loss(color, gt, weights)
    depth = depth_loss(render.depth, target.depth) if target.depth is not None else zero
    opacity = opacity_loss(render.opacity, target.sky_mask) if target.sky_mask is not None else zero

    rng = rng or np.random.default_rng()
    delta = int(rng.integers(1, config.pose_smooth_max_offset + 1))
    pose = pose_smooth_loss(scene, t, delta).to(color.dtype)
    scale = scale_regularizer(world).to(color.dtype) if (world is not None and config.lambda_scale_reg > 0) else zero

    weighted = {
        'l1': (1.0 - config.lambda_r) * l1,
        'ssim': config.lambda_r * ssim_term,
        'depth': config.lambda_depth * depth,
        'opacity': config.lambda_opacity * opacity,
        'pose_smooth': config.lambda_pose * pose,
        'scale_reg': config.lambda_scale_reg * scale
    }
    total = weighted['l1'] + weighted['ssim'] + weighted['depth'] + weighted['opacity'] \
        + weighted['pose_smooth'] + weighted['scale_reg']
    return LossReport(
        total=total, l1=l1, ssim=ssim_term, depth=depth, opacity=opacity,
        pose_smooth=pose, scale_reg=scale, weighted=weighted, delta=delta
    )


__all__ = [
    'FrameTarget',
    'LossReport',
    'gaussian_window',
    'ssim_map',
    'dynamic_weights',
    'l1_loss',
    'ssim_loss',
    'depth_loss',
    'opacity_loss',
    'pose_smooth_loss',
    'scale_regularizer',
    'compute_losses'
]
