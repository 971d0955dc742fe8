from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional
import logging
import math
import time

import torch

from splat_graph.core.constants import (
    ALPHA_MAX,
    ALPHA_MIN,
    FOOTPRINT_SIGMAS,
    LOW_PASS_FILTER,
    MIN_COV_DET,
    MIN_DEPTH_OPACITY,
    TILE_SIZE,
    SourceTag
)
from splat_graph.core.errors import ValidationError
from splat_graph.core.monitoring import metrics_manager
from splat_graph.models.camera import Camera
from splat_graph.models.gaussians import PARAM_COLUMNS, GaussianSet, build_covariance
from splat_graph.models.geometry import apply_matrix, matmul3
from splat_graph.services.sh import eval_sh

if TYPE_CHECKING:
    from splat_graph.models.scene import EnvironmentMap

logger = logging.getLogger(__name__)


@dataclass
class Projection:
    """Screen-space footprints of the blobs that survive culling"""
    index: torch.Tensor  # (M,) rows of the input set
    mean2d: torch.Tensor  # (M, 2) pixels
    cov2d: torch.Tensor  # (M, 2, 2) pixels², low-pass inflated
    conic: torch.Tensor  # (M, 3) inverse covariance a, b, c
    depth: torch.Tensor  # (M,) camera z
    radius: torch.Tensor  # (M,) 3σ footprint, pixels
    visible: torch.Tensor  # (N,) bool
    skipped: int = 0


@dataclass
class RenderOutput:
    color: torch.Tensor  # (H, W, 3)
    depth: torch.Tensor  # (H, W)
    opacity: torch.Tensor  # (H, W)
    dynamic_opacity: torch.Tensor  # (H, W)
    color_gaussians: torch.Tensor  # (H, W, 3), before sky
    visible: torch.Tensor  # (N,) bool
    abs_grad: torch.Tensor  # (N, 2) filled during backward
    sky_color: Optional[torch.Tensor] = None
    skipped: int = 0
    stats: Dict[str, float] = field(default_factory=dict)


def project(camera: Camera, gaussians: GaussianSet) -> Projection:
    """Perspective projection with the local affine Jacobian"""
    dtype = gaussians.dtype
    pose = camera.world_to_camera.to(dtype)
    R = pose.rotation_matrix
    t = pose.translation

    finite = (
        torch.isfinite(gaussians.means).all(-1)
        & torch.isfinite(gaussians.quats).all(-1)
        & torch.isfinite(gaussians.log_scales).all(-1)
        & torch.isfinite(gaussians.opacity_logit)
        & torch.isfinite(gaussians.sh_dc).flatten(1).all(-1)
        & torch.isfinite(gaussians.sh_rest).flatten(1).all(-1)
    )
    with torch.no_grad():
        z_all = torch.where(finite.unsqueeze(-1), gaussians.means.detach(), torch.zeros_like(gaussians.means))
        z_all = (z_all * R[2]).sum(-1) + t[2]
    candidates = finite & (z_all > camera.near)
    index = torch.nonzero(candidates).squeeze(-1)

    p = apply_matrix(R, gaussians.means[index]) + t
    x, y, z = p.unbind(-1)
    cov3d = build_covariance(torch.exp(gaussians.log_scales[index]), gaussians.quats[index])
    cov_cam = matmul3(matmul3(R, cov3d), R.transpose(-1, -2))

    fx, fy = camera.fx, camera.fy
    j00 = fx / z
    j02 = -fx * x / (z * z)
    j11 = fy / z
    j12 = -fy * y / (z * z)
    c00, c01, c02 = cov_cam[:, 0, 0], cov_cam[:, 0, 1], cov_cam[:, 0, 2]
    c11, c12, c22 = cov_cam[:, 1, 1], cov_cam[:, 1, 2], cov_cam[:, 2, 2]
    a = j00 * j00 * c00 + 2.0 * j00 * j02 * c02 + j02 * j02 * c22 + LOW_PASS_FILTER
    b = j00 * j11 * c01 + j00 * j12 * c02 + j02 * j11 * c12 + j02 * j12 * c22
    c = j11 * j11 * c11 + 2.0 * j11 * j12 * c12 + j12 * j12 * c22 + LOW_PASS_FILTER
    det = a * c - b * b

    mean2d = torch.stack([fx * x / z + camera.cx, fy * y / z + camera.cy], dim=-1)

    with torch.no_grad():
        mid = 0.5 * (a + c)
        lam = mid + torch.sqrt(torch.clamp_min(mid * mid - det, 0.0))
        radius = FOOTPRINT_SIGMAS * torch.sqrt(lam.clamp_min(0.0))
        u, v = mean2d[:, 0], mean2d[:, 1]
        on_screen = (
            (u + radius >= -0.5) & (u - radius <= camera.width - 0.5)
            & (v + radius >= -0.5) & (v - radius <= camera.height - 0.5)
        )
        nonsingular = det > MIN_COV_DET
        keep = nonsingular & on_screen
    skipped = int((~nonsingular).sum())
    if skipped:
        logger.debug(f"Skipped {skipped} blobs with singular projected covariance")

    safe_det = torch.where(keep, det, torch.ones_like(det))
    conic = torch.stack([c / safe_det, -b / safe_det, a / safe_det], dim=-1)
    cov2d = torch.stack([torch.stack([a, b], -1), torch.stack([b, c], -1)], dim=-2)

    visible = torch.zeros(gaussians.count, dtype=torch.bool, device=gaussians.device)
    visible[index[keep]] = True
    return Projection(
        index=index[keep],
        mean2d=mean2d[keep],
        cov2d=cov2d[keep],
        conic=conic[keep],
        depth=z[keep],
        radius=radius[keep],
        visible=visible,
        skipped=skipped
    )


def _exclusive_cumprod(x: torch.Tensor) -> torch.Tensor:
    ones = torch.ones_like(x[:, :1])
    return torch.cat([ones, torch.cumprod(x, dim=1)[:, :-1]], dim=1)


def _abs_grad_hook(buffer: torch.Tensor, rows: torch.Tensor, scale: torch.Tensor):
    def hook(grad: torch.Tensor) -> None:
        with torch.no_grad():
            buffer.index_add_(0, rows, grad.abs().sum(0) * scale)
    return hook


def render(
    camera: Camera,
    world: GaussianSet,
    sky: Optional["EnvironmentMap"] = None,
    track_abs_grad: bool = True
) -> RenderOutput:
    """Tile-based depth-sorted alpha compositing"""
    started = time.perf_counter()
    dtype = world.dtype
    device = world.device
    H, W = camera.height, camera.width

    proj = project(camera, world)
    M = proj.index.shape[0]

    colors = torch.zeros(0, 3, dtype=dtype, device=device)
    opacity = torch.zeros(0, dtype=dtype, device=device)
    dynamic = torch.zeros(0, dtype=dtype, device=device)
    if M:
        center = camera.world_to_camera.to(dtype).inverse().translation
        means = world.means[proj.index]
        dirs = means - center
        dirs = dirs / dirs.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        colors = eval_sh(world.sh[proj.index], dirs, world.sh_degree)
        opacity = torch.sigmoid(world.opacity_logit[proj.index])
        dynamic = (world.source_tag[proj.index] != int(SourceTag.BACKGROUND)).to(dtype)

    abs_grad = torch.zeros(world.count, 2, dtype=dtype, device=device)
    # Pixel gradients reported in NDC units
    ndc_scale = torch.tensor([0.5 * W, 0.5 * H], dtype=dtype, device=device)

    with torch.no_grad():
        u_min = proj.mean2d[:, 0] - proj.radius
        u_max = proj.mean2d[:, 0] + proj.radius
        v_min = proj.mean2d[:, 1] - proj.radius
        v_max = proj.mean2d[:, 1] + proj.radius

    pixel_chunks: List[torch.Tensor] = []
    color_chunks: List[torch.Tensor] = []
    opacity_chunks: List[torch.Tensor] = []
    depth_chunks: List[torch.Tensor] = []
    dynamic_chunks: List[torch.Tensor] = []

    tiles_y = math.ceil(H / TILE_SIZE)
    tiles_x = math.ceil(W / TILE_SIZE)
    for ty in range(tiles_y):
        y0, y1 = ty * TILE_SIZE, min(H, (ty + 1) * TILE_SIZE)
        for tx in range(tiles_x):
            x0, x1 = tx * TILE_SIZE, min(W, (tx + 1) * TILE_SIZE)
            ys, xs = torch.meshgrid(
                torch.arange(y0, y1, device=device),
                torch.arange(x0, x1, device=device),
                indexing='ij'
            )
            pixel_chunks.append((ys * W + xs).reshape(-1))
            P = ys.numel()

            in_tile = (u_max >= x0) & (u_min <= x1 - 1) & (v_max >= y0) & (v_min <= y1 - 1)
            sel = torch.nonzero(in_tile).squeeze(-1)
            if sel.numel() == 0:
                color_chunks.append(torch.zeros(P, 3, dtype=dtype, device=device))
                opacity_chunks.append(torch.zeros(P, dtype=dtype, device=device))
                depth_chunks.append(torch.zeros(P, dtype=dtype, device=device))
                dynamic_chunks.append(torch.zeros(P, dtype=dtype, device=device))
                continue

            # sel is ascending in blob index, so a stable depth sort breaks ties by index
            order = torch.sort(proj.depth[sel].detach(), stable=True).indices
            sel = sel[order]

            pix = torch.stack([xs.reshape(-1), ys.reshape(-1)], dim=-1).to(dtype)
            mean2d = proj.mean2d[sel].unsqueeze(0).expand(P, -1, -1)
            if track_abs_grad and mean2d.requires_grad:
                mean2d.register_hook(_abs_grad_hook(abs_grad, proj.index[sel], ndc_scale))
            d = pix.unsqueeze(1) - mean2d
            dx, dy = d[..., 0], d[..., 1]
            conic = proj.conic[sel]
            power = -0.5 * (conic[:, 0] * dx * dx + conic[:, 2] * dy * dy) - conic[:, 1] * dx * dy
            alpha = torch.clamp(opacity[sel] * torch.exp(power), max=ALPHA_MAX)
            alpha = torch.where(alpha >= ALPHA_MIN, alpha, torch.zeros_like(alpha))

            weights = alpha * _exclusive_cumprod(1.0 - alpha)
            color_chunks.append(weights @ colors[sel])
            opacity_chunks.append(weights.sum(dim=1))
            depth_chunks.append(weights @ proj.depth[sel])

            alpha_dyn = alpha * dynamic[sel]
            dynamic_chunks.append((alpha_dyn * _exclusive_cumprod(1.0 - alpha_dyn)).sum(dim=1))

    pixels = torch.cat(pixel_chunks)

    def stitch(chunks: List[torch.Tensor], channels: int) -> torch.Tensor:
        values = torch.cat(chunks, dim=0)
        shape = (H * W, channels) if channels else (H * W,)
        out = torch.zeros(shape, dtype=dtype, device=device).index_copy(0, pixels, values)
        return out.reshape((H, W, channels) if channels else (H, W))

    color_g = stitch(color_chunks, 3)
    opacity_map = stitch(opacity_chunks, 0)
    depth_acc = stitch(depth_chunks, 0)
    dynamic_map = stitch(dynamic_chunks, 0)

    covered = opacity_map > MIN_DEPTH_OPACITY
    safe_opacity = torch.where(covered, opacity_map, torch.ones_like(opacity_map))
    depth = torch.where(covered, depth_acc / safe_opacity, torch.full_like(depth_acc, camera.far))

    sky_color = None
    color = color_g
    if sky is not None:
        sky_color = sky.query(camera.world_directions(dtype))
        color = color_g + (1.0 - opacity_map).unsqueeze(-1) * sky_color

    duration = time.perf_counter() - started
    metrics_manager.track_render(duration, proj.skipped)
    return RenderOutput(
        color=color,
        depth=depth,
        opacity=opacity_map,
        dynamic_opacity=dynamic_map,
        color_gaussians=color_g,
        visible=proj.visible,
        abs_grad=abs_grad,
        sky_color=sky_color,
        skipped=proj.skipped,
        stats={'visible': float(M), 'skipped': float(proj.skipped), 'seconds': duration}
    )


def render_dynamic_mask(camera: Camera, world: GaussianSet) -> torch.Tensor:
    """Opacity composited from non-background blobs only"""
    return render(camera, world, None, track_abs_grad=False).dynamic_opacity


@dataclass
class RenderGradients:
    columns: Dict[str, torch.Tensor]
    sky: Optional[torch.Tensor]
    abs_grad: torch.Tensor


ADJOINT_SHAPES = {
    'color': lambda H, W: (H, W, 3),
    'depth': lambda H, W: (H, W),
    'opacity': lambda H, W: (H, W),
    'dynamic_opacity': lambda H, W: (H, W),
}


def render_backward(
    camera: Camera,
    world: GaussianSet,
    sky: Optional["EnvironmentMap"],
    adjoint: Dict[str, torch.Tensor]
) -> RenderGradients:
    """Reverse-mode gradients of Σ adjoint · maps, recomputing the forward pass"""
    H, W = camera.height, camera.width
    for key, value in adjoint.items():
        if key not in ADJOINT_SHAPES:
            raise ValidationError(f"Unknown render output '{key}' in adjoint", field='adjoint')
        expected = ADJOINT_SHAPES[key](H, W)
        if tuple(value.shape) != expected:
            raise ValidationError(
                f"Adjoint for {key} has shape {tuple(value.shape)}, expected {expected}",
                field='adjoint'
            )

    leaves = {name: world.columns()[name].detach().clone().requires_grad_(True) for name in PARAM_COLUMNS}
    leaf_world = world.replace(**leaves)
    leaf_sky = sky.detached_leaf() if sky is not None else None

    with torch.enable_grad():
        out = render(camera, leaf_world, leaf_sky, track_abs_grad=True)
        total = sum((value * getattr(out, key)).sum() for key, value in adjoint.items())

        inputs = list(leaves.values())
        if leaf_sky is not None:
            inputs.append(leaf_sky.texels)
        if isinstance(total, torch.Tensor) and total.requires_grad:
            grads = torch.autograd.grad(total, inputs, allow_unused=True)
        else:
            grads = [None] * len(inputs)

    grads = [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]
    columns = dict(zip(PARAM_COLUMNS, grads[:len(PARAM_COLUMNS)]))
    return RenderGradients(
        columns=columns,
        sky=grads[-1] if leaf_sky is not None else None,
        abs_grad=out.abs_grad
    )


__all__ = [
    'Projection',
    'RenderOutput',
    'RenderGradients',
    'project',
    'render',
    'render_backward',
    'render_dynamic_mask'
]
