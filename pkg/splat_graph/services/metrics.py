from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import torch
from sklearn.neighbors import NearestNeighbors

from splat_graph.core.constants import (
    LABEL_REGIONS,
    METRICS_HEADER,
    MIN_DEPTH_OPACITY,
    MIN_MSE,
    MOVING_SPEED_THRESHOLD,
    NVS_STRIDE,
    PSNR_CAP,
    RegionClass
)
from splat_graph.core.errors import DatasetError, MetricError, ValidationError
from splat_graph.models.camera import Camera
from splat_graph.models.dataset import SceneDataset
from splat_graph.models.scene import SceneGraph
from splat_graph.services.losses import ssim_map
from splat_graph.services.pose_pipeline import project_box
from splat_graph.services.rasterizer import RenderOutput, render
from splat_graph.services.scene_graph import assemble_world

logger = logging.getLogger(__name__)

REGIONS = ('human', 'vehicle', 'other')
REGION_CLASSES = {'human': RegionClass.HUMAN, 'vehicle': RegionClass.VEHICLE, 'other': RegionClass.OTHER}


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def _pair(a, b) -> Tuple[torch.Tensor, torch.Tensor]:
    a = _as_tensor(a).detach().to(torch.float64)
    b = _as_tensor(b).detach().to(torch.float64)
    if a.shape != b.shape:
        raise ValidationError(f"Images differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}", field='image')
    return a, b


def psnr_from_mse(mse: float) -> float:
    if mse < MIN_MSE:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    return psnr_from_mse(float(((a - b) ** 2).mean()))


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    return float(ssim_map(a, b).mean())


def masked_psnr(a, b, mask) -> Optional[float]:
    """PSNR over mask pixels, None for an empty mask"""
    a, b = _pair(a, b)
    mask = _as_tensor(mask).to(torch.bool)
    if not bool(mask.any()):
        return None
    return psnr_from_mse(float(((a - b) ** 2)[mask].mean()))


def masked_ssim(a, b, mask) -> Optional[float]:
    a, b = _pair(a, b)
    mask = _as_tensor(mask).to(torch.bool)
    if not bool(mask.any()):
        return None
    return float(ssim_map(a, b)[mask].mean())


def nvs_split(frame_count: int) -> Tuple[List[int], List[int]]:
    """Every tenth frame held out for novel-view evaluation"""
    if frame_count < NVS_STRIDE:
        raise DatasetError(f"Novel-view split needs at least {NVS_STRIDE} frames, got {frame_count}")
    test = [f for f in range(frame_count) if f % NVS_STRIDE == 0]
    train = [f for f in range(frame_count) if f % NVS_STRIDE != 0]
    return train, test


def moving_tracklets(dataset: SceneDataset) -> list:
    return [t for t in dataset.tracklets if t.mean_speed(dataset.timestamps) > MOVING_SPEED_THRESHOLD]


def region_masks(dataset: SceneDataset, camera_id: int, frame: int) -> Dict[str, np.ndarray]:
    """Semantic regions united with the projected boxes of moving tracklets"""
    camera = dataset.camera(camera_id, frame)
    H, W = camera.height, camera.width
    masks = {region: np.zeros((H, W), dtype=bool) for region in REGIONS}
    semantic = dataset.semantic_masks.get((camera_id, frame))
    if semantic is not None:
        for region, cls in REGION_CLASSES.items():
            masks[region] |= semantic == int(cls)

    for tracklet in moving_tracklets(dataset):
        if not tracklet.valid[frame]:
            continue
        region = LABEL_REGIONS.get(tracklet.label.lower(), RegionClass.OTHER)
        name = next(k for k, v in REGION_CLASSES.items() if v == region)
        box = project_box(tracklet, frame, camera)
        if box is None:
            continue
        x0, y0 = int(math.floor(box[0])), int(math.floor(box[1]))
        x1, y1 = int(math.ceil(box[2])), int(math.ceil(box[3]))
        masks[name][max(y0, 0):min(y1, H), max(x0, 0):min(x1, W)] = True
    return masks


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbour distance"""
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise MetricError("Chamfer distance needs two non-empty point sets", metric='chamfer')
    d_ab, _ = NearestNeighbors(n_neighbors=1).fit(b).kneighbors(a)
    d_ba, _ = NearestNeighbors(n_neighbors=1).fit(a).kneighbors(b)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def depth_metrics(
    output: RenderOutput,
    camera: Camera,
    origins: np.ndarray,
    directions: np.ndarray,
    ranges: np.ndarray,
    uv: np.ndarray
) -> Tuple[float, float]:
    """(chamfer, rmse) of rendered ranges against lidar returns"""
    depth = output.depth.detach().cpu().numpy().astype(np.float64)
    opacity = output.opacity.detach().cpu().numpy()
    H, W = depth.shape
    px = np.clip(np.rint(uv[:, 0]).astype(int), 0, W - 1)
    py = np.clip(np.rint(uv[:, 1]).astype(int), 0, H - 1)
    valid = opacity[py, px] > MIN_DEPTH_OPACITY
    if not bool(valid.any()):
        raise MetricError("No lidar ray hits rendered geometry", metric='depth')

    # Rendered depth is camera z; range scales it by the ray length at unit z
    rays = np.stack([(uv[:, 0] - camera.cx) / camera.fx, (uv[:, 1] - camera.cy) / camera.fy, np.ones(len(uv))], -1)
    predicted = depth[py, px] * np.linalg.norm(rays, axis=-1)

    gt_r, pred_r = ranges[valid], predicted[valid]
    rmse = float(np.sqrt(np.mean((gt_r - pred_r) ** 2)))
    gt_points = origins[valid] + directions[valid] * gt_r[:, None]
    pred_points = origins[valid] + directions[valid] * pred_r[:, None]
    return chamfer_distance(gt_points, pred_points), rmse


@dataclass
class EvaluationReport:
    split: str
    full_psnr: float
    full_ssim: float
    regions: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    depth: Dict[str, Optional[float]] = field(default_factory=dict)
    frames: int = 0

    def row(self) -> Dict[str, Optional[float]]:
        values = {'full_psnr': self.full_psnr, 'full_ssim': self.full_ssim}
        for region in ('human', 'vehicle'):
            stats = self.regions.get(region, {})
            values[f"{region}_psnr"] = stats.get('psnr')
            values[f"{region}_ssim"] = stats.get('ssim')
        return values

    def to_dict(self) -> dict:
        return {
            'split': self.split,
            'frames': self.frames,
            'full': {'psnr': self.full_psnr, 'ssim': self.full_ssim},
            'regions': self.regions,
            'depth': self.depth
        }


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def evaluate_scene(
    scene: SceneGraph,
    dataset: SceneDataset,
    frames: Sequence[int],
    split: str = 'train',
    with_depth: bool = False
) -> EvaluationReport:
    """Average image metrics over every camera at the given frames"""
    full_p, full_s = [], []
    region_p: Dict[str, List[float]] = {r: [] for r in REGIONS}
    region_s: Dict[str, List[float]] = {r: [] for r in REGIONS}
    chamfers, rmses = [], []
    count = 0
    with torch.no_grad():
        for frame in frames:
            world = assemble_world(scene, frame)
            for camera_id in dataset.camera_ids:
                camera = dataset.camera(camera_id, frame).to(scene.dtype)
                output = render(camera, world, scene.sky, track_abs_grad=False)
                gt = torch.as_tensor(dataset.image(camera_id, frame), dtype=torch.float64)
                pred = output.color.clamp(0.0, 1.0)
                full_p.append(psnr(pred, gt))
                full_s.append(ssim(pred, gt))
                for region, mask in region_masks(dataset, camera_id, frame).items():
                    p = masked_psnr(pred, gt, mask)
                    if p is not None:
                        region_p[region].append(p)
                        region_s[region].append(masked_ssim(pred, gt, mask))
                if with_depth and (camera_id, frame) in dataset.depth:
                    origins, directions, ranges, uv = dataset.lidar_rays(camera_id, frame)
                    if ranges.shape[0]:
                        try:
                            chamfer, rmse = depth_metrics(output, camera, origins, directions, ranges, uv)
                        except MetricError as e:
                            logger.warning(f"Depth metrics skipped for camera {camera_id} frame {frame}: {e}")
                        else:
                            chamfers.append(chamfer)
                            rmses.append(rmse)
                count += 1
    if not count:
        raise MetricError(f"No frames to evaluate for split '{split}'", metric='image')
    return EvaluationReport(
        split=split,
        full_psnr=float(np.mean(full_p)),
        full_ssim=float(np.mean(full_s)),
        regions={r: {'psnr': _mean(region_p[r]), 'ssim': _mean(region_s[r])} for r in REGIONS},
        depth={'chamfer': _mean(chamfers), 'rmse': _mean(rmses)} if with_depth else {},
        frames=count
    )


class MetricsTable:
    """Tab-separated metric log, absent values written as '-'"""

    def __init__(self, path: Path):
        self.path = Path(path)

    def append(self, step: int, split: str, row: Dict[str, Optional[float]]) -> None:
        new = not self.path.exists()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        cells = [str(step), split]
        for column in METRICS_HEADER[2:]:
            value = row.get(column)
            cells.append('-' if value is None else f"{value:.4f}")
        with self.path.open('a', encoding='utf-8') as handle:
            if new:
                handle.write('\t'.join(METRICS_HEADER) + '\n')
            handle.write('\t'.join(cells) + '\n')

    def read(self) -> List[Dict[str, str]]:
        lines = self.path.read_text(encoding='utf-8').splitlines()
        header = lines[0].split('\t')
        return [dict(zip(header, line.split('\t'))) for line in lines[1:]]


__all__ = [
    'REGIONS',
    'EvaluationReport',
    'MetricsTable',
    'psnr',
    'psnr_from_mse',
    'ssim',
    'masked_psnr',
    'masked_ssim',
    'nvs_split',
    'moving_tracklets',
    'region_masks',
    'chamfer_distance',
    'depth_metrics',
    'evaluate_scene'
]
