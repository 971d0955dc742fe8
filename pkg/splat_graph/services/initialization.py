from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging

import numpy as np
import torch
from sklearn.neighbors import NearestNeighbors

from splat_graph.core.config import ExperimentConfig
from splat_graph.core.constants import NodeKind, SourceTag
from splat_graph.core.errors import DatasetError
from splat_graph.models.dataset import SceneDataset, Tracklet3D
from splat_graph.models.gaussians import GaussianSet
from splat_graph.models.geometry import SE3Pose
from splat_graph.models.human import BodyPoseSequence
from splat_graph.models.scene import EnvironmentMap, SceneGraph, SceneNode, TrackedPose
from splat_graph.services.deformation import DeformationNet
from splat_graph.services.skinning import skin_logits, tessellate_template

logger = logging.getLogger(__name__)

NEIGHBORS = 3
EXTENT_MARGIN = 1.1
DEFAULT_SKY = (0.5, 0.6, 0.8)


@dataclass
class LidarCloud:
    points: np.ndarray  # (P, 3) world
    colors: np.ndarray  # (P, 3) in [0, 1]
    frames: np.ndarray  # (P,) frame index


@dataclass
class InitReport:
    planned: Dict[str, int] = field(default_factory=dict)
    background: int = 0
    removed_dynamic: int = 0
    fallback_nodes: List[str] = field(default_factory=list)


def background_budget(config: ExperimentConfig) -> Dict[str, int]:
    """Point counts per background source after budget scaling"""
    init = config.init
    return {
        'lidar': int(round(init.lidar_points * init.budget_scale)),
        'near': int(round(init.near_points * init.budget_scale)),
        'far': int(round(init.far_points * init.budget_scale)),
    }


def collect_lidar(dataset: SceneDataset) -> LidarCloud:
    """World points of every depth sample, colored by the pixel it landed on"""
    points, colors, frames = [], [], []
    for (camera_id, frame) in sorted(dataset.depth):
        origins, directions, ranges, uv = dataset.lidar_rays(camera_id, frame)
        if not ranges.shape[0]:
            continue
        image = dataset.image(camera_id, frame)
        H, W = image.shape[:2]
        px = np.clip(np.rint(uv[:, 0]).astype(int), 0, W - 1)
        py = np.clip(np.rint(uv[:, 1]).astype(int), 0, H - 1)
        points.append(origins + directions * ranges[:, None])
        colors.append(image[py, px, :3].astype(np.float64))
        frames.append(np.full(ranges.shape[0], frame))
    if not points:
        return LidarCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=int))
    return LidarCloud(np.concatenate(points), np.concatenate(colors), np.concatenate(frames))


def scene_center_and_extent(dataset: SceneDataset) -> Tuple[np.ndarray, float]:
    """Camera-centre centroid and 1.1 × the largest distance to it"""
    centers = np.stack([cam.center.detach().cpu().numpy().astype(np.float64) for cam in dataset.cameras.values()])
    centroid = centers.mean(axis=0)
    radius = float(np.linalg.norm(centers - centroid, axis=-1).max()) * EXTENT_MARGIN
    return centroid, radius if radius > 1e-6 else 1.0


def nearest_neighbor_scales(points: np.ndarray, default: float) -> np.ndarray:
    """RMS distance to the three nearest neighbours"""
    n = points.shape[0]
    if n <= 1:
        return np.full(n, default)
    k = min(NEIGHBORS, n - 1)
    distances, _ = NearestNeighbors(n_neighbors=k + 1).fit(points).kneighbors(points)
    scales = np.sqrt((distances[:, 1:] ** 2).mean(axis=1))
    return np.where(scales > 1e-7, scales, default)


def inside_any_box(points: np.ndarray, tracklets: List[Tracklet3D], frames: Optional[np.ndarray] = None) -> np.ndarray:
    """Points inside a valid box; per-point frames restrict the test to that frame"""
    mask = np.zeros(points.shape[0], dtype=bool)
    for tracklet in tracklets:
        for f in tracklet.valid_frames():
            rows = np.arange(points.shape[0]) if frames is None else np.nonzero(frames == f)[0]
            if rows.size:
                mask[rows] |= tracklet.contains(points[rows], f)
    return mask


def sample_shell(rng: np.random.Generator, count: int, center: np.ndarray, r_min: float, r_max: float,
                 inverse: bool) -> np.ndarray:
    """Random directions, radius uniform in distance or in inverse distance"""
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True).clip(min=1e-12)
    if inverse:
        radii = 1.0 / rng.uniform(1.0 / r_max, 1.0 / r_min, size=count)
    else:
        radii = rng.uniform(r_min, r_max, size=count)
    return center + directions * radii[:, None]


def _blobs(points: np.ndarray, colors: np.ndarray, degree: int, tag: SourceTag, default_scale: float,
           dtype: torch.dtype) -> GaussianSet:
    scales = nearest_neighbor_scales(points, default_scale)
    return GaussianSet.from_points(
        torch.as_tensor(points, dtype=dtype),
        torch.as_tensor(np.clip(colors, 0.0, 1.0), dtype=dtype),
        torch.as_tensor(scales, dtype=dtype),
        degree=degree,
        tag=tag
    )


def build_background(
    dataset: SceneDataset,
    config: ExperimentConfig,
    cloud: LidarCloud,
    rng: np.random.Generator,
    report: InitReport,
    dtype: torch.dtype
) -> Tuple[GaussianSet, float]:
    budget = background_budget(config)
    report.planned = dict(budget)
    centroid, extent = scene_center_and_extent(dataset)

    lidar_idx = np.arange(cloud.points.shape[0])
    if lidar_idx.size > budget['lidar']:
        lidar_idx = np.sort(rng.choice(lidar_idx, size=budget['lidar'], replace=False))
    lidar_points, lidar_colors = cloud.points[lidar_idx], cloud.colors[lidar_idx]
    dynamic = inside_any_box(lidar_points, dataset.tracklets, cloud.frames[lidar_idx])

    near = sample_shell(rng, budget['near'], centroid, 0.0, extent, inverse=False)
    far = sample_shell(rng, budget['far'], centroid, extent, extent * config.init.far_radius_factor, inverse=True)
    random_points = np.concatenate([near, far])
    random_colors = rng.uniform(0.0, 1.0, size=random_points.shape)
    random_dynamic = inside_any_box(random_points, dataset.tracklets)

    points = np.concatenate([lidar_points[~dynamic], random_points[~random_dynamic]])
    colors = np.concatenate([lidar_colors[~dynamic], random_colors[~random_dynamic]])
    report.removed_dynamic = int(dynamic.sum() + random_dynamic.sum())
    report.background = points.shape[0]
    background = _blobs(points, colors, config.model.sh_degree_background, SourceTag.BACKGROUND,
                        0.01 * extent, dtype)
    return background, extent


def box_track(tracklet: Tracklet3D, dtype: torch.dtype, translation_only: bool = False) -> TrackedPose:
    poses: List[Optional[SE3Pose]] = []
    for f in range(tracklet.frame_count):
        if not tracklet.valid[f]:
            poses.append(None)
        elif translation_only:
            poses.append(SE3Pose(SE3Pose.identity(dtype).rotation, torch.as_tensor(tracklet.centers[f], dtype=dtype)))
        else:
            poses.append(tracklet.box_pose(f, dtype))
    return TrackedPose.from_poses(poses, dtype)


def crop_local_points(cloud: LidarCloud, tracklet: Tracklet3D) -> Tuple[np.ndarray, np.ndarray]:
    """Lidar points inside the box at their own frame, in box coordinates"""
    points, colors = [], []
    for f in tracklet.valid_frames():
        rows = np.nonzero(cloud.frames == f)[0]
        if not rows.size:
            continue
        inside = rows[tracklet.contains(cloud.points[rows], f)]
        if inside.size:
            points.append(tracklet.to_local(cloud.points[inside], f))
            colors.append(cloud.colors[inside])
    if not points:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.concatenate(points), np.concatenate(colors)


def _box_payload(
    cloud: LidarCloud,
    tracklet: Tracklet3D,
    config: ExperimentConfig,
    degree: int,
    tag: SourceTag,
    rng: np.random.Generator,
    report: InitReport,
    dtype: torch.dtype
) -> GaussianSet:
    points, colors = crop_local_points(cloud, tracklet)
    frames = tracklet.valid_frames()
    dims = tracklet.dims[frames[0]] if frames else np.ones(3)
    if points.shape[0] == 0:
        n = config.init.node_fallback_points
        points = rng.uniform(-0.5, 0.5, size=(n, 3)) * dims
        colors = np.full((n, 3), 0.5)
        report.fallback_nodes.append(tracklet.track_id)
        logger.warning(
            f"No lidar points inside box of {tracklet.track_id}, using {n} random points",
            extra={'node_id': tracklet.track_id}
        )
    return _blobs(points, colors, degree, tag, 0.05 * float(np.min(dims)), dtype)


def _cast_body_pose(sequence: BodyPoseSequence, dtype: torch.dtype) -> BodyPoseSequence:
    cloned = sequence.clone()
    return cloned.replace(quats=cloned.quats.to(dtype))


def anchor_box(means: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    lo, hi = means.min(dim=0).values, means.max(dim=0).values
    return (lo + hi) / 2.0, ((hi - lo) / 2.0).clamp_min(1e-3)


def init_scene(
    dataset: SceneDataset,
    config: Optional[ExperimentConfig] = None,
    dtype: Optional[torch.dtype] = None
) -> Tuple[SceneGraph, InitReport]:
    """Background, sky and one node per tracklet"""
    config = config or ExperimentConfig()
    dtype = dtype or torch.get_default_dtype()
    seed = config.trainer.seed
    rng = np.random.default_rng(seed)
    report = InitReport()

    cloud = collect_lidar(dataset)
    background, extent = build_background(dataset, config, cloud, rng, report, dtype)

    humans = [t.track_id for t in dataset.humans()]
    poses_init = dataset.poses_init
    if humans and poses_init is None:
        raise DatasetError("Dataset has human tracklets but no prepared poses; run pose-prep first")
    demoted = set(poses_init.demoted) if poses_init is not None else set()

    model = config.model
    generator = torch.Generator().manual_seed(seed)
    nodes: List[SceneNode] = []
    for tracklet in dataset.tracklets:
        kind = tracklet.kind
        if kind == NodeKind.ARTICULATED and tracklet.track_id in demoted:
            kind = NodeKind.DEFORMABLE
        if kind == NodeKind.ARTICULATED and tracklet.track_id not in poses_init.sequences:
            raise DatasetError(f"No prepared body pose for human {tracklet.track_id}")

        if kind == NodeKind.ARTICULATED:
            if dataset.template is None:
                raise DatasetError("Dataset has human tracklets but no articulated template")
            template = dataset.template.to(dtype)
            payload, weights = tessellate_template(template, degree=model.sh_degree_articulated)
            nodes.append(SceneNode(
                node_id=tracklet.track_id, label=tracklet.label, kind=kind,
                payload=payload, pose=box_track(tracklet, dtype, translation_only=True),
                template=template, skin_logits=skin_logits(weights),
                body_pose=_cast_body_pose(poses_init.sequences[tracklet.track_id], dtype)
            ))
        elif kind == NodeKind.RIGID:
            payload = _box_payload(cloud, tracklet, config, model.sh_degree_rigid, SourceTag.RIGID, rng, report, dtype)
            nodes.append(SceneNode(
                node_id=tracklet.track_id, label=tracklet.label, kind=kind,
                payload=payload, pose=box_track(tracklet, dtype)
            ))
        else:
            payload = _box_payload(cloud, tracklet, config, model.sh_degree_deformable, SourceTag.DEFORMABLE,
                                   rng, report, dtype)
            embedding = 0.1 * torch.randn(model.embedding_dim, generator=generator, dtype=torch.float64)
            nodes.append(SceneNode(
                node_id=tracklet.track_id, label=tracklet.label, kind=NodeKind.DEFORMABLE,
                payload=payload, pose=box_track(tracklet, dtype),
                embedding=embedding.to(dtype),
                anchors=payload.means.clone(),
                anchor_box=anchor_box(payload.means)
            ))

    net = None
    if any(n.kind == NodeKind.DEFORMABLE for n in nodes):
        net = DeformationNet.seeded(
            seed, dtype,
            embedding_dim=model.embedding_dim,
            hidden=model.deform_hidden,
            layers=model.deform_layers,
            position_bands=model.deform_position_bands,
            time_bands=model.deform_time_bands
        )

    sky_pixels = [dataset.images[key][mask] for key, mask in dataset.sky_masks.items()
                  if key in dataset.images and mask.any()]
    sky_color = np.concatenate(sky_pixels).mean(axis=0)[:3] if sky_pixels else np.array(DEFAULT_SKY)
    sky = EnvironmentMap.constant(model.env_map_height, model.env_map_width, sky_color.tolist(), dtype)

    scene = SceneGraph(
        scene_id=dataset.scene_id,
        background=background,
        sky=sky,
        nodes=nodes,
        timestamps=torch.as_tensor(dataset.timestamps, dtype=torch.float64),
        deformation_net=net,
        scene_extent=extent,
        use_lbs=config.trainer.use_lbs,
        use_deformation=config.trainer.use_deformation
    )
    logger.info(
        f"Initialized scene {dataset.scene_id}: {background.count} background blobs "
        f"({report.removed_dynamic} dynamic points removed), {len(nodes)} nodes, extent {extent:.2f}",
        extra={'scene_id': dataset.scene_id}
    )
    return scene, report


__all__ = [
    'LidarCloud',
    'InitReport',
    'background_budget',
    'collect_lidar',
    'scene_center_and_extent',
    'nearest_neighbor_scales',
    'inside_any_box',
    'sample_shell',
    'build_background',
    'box_track',
    'crop_local_points',
    'anchor_box',
    'init_scene'
]
