from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import orjson
import torch
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator

from splat_graph.core.constants import LABEL_REGIONS, NodeKind, PoseProvenance, RegionClass, SourceTag
from splat_graph.core.errors import SyntheticSpecError
from splat_graph.models.camera import Camera
from splat_graph.models.dataset import DepthSamples, DetectedTracklet, SceneDataset, Tracklet3D
from splat_graph.models.gaussians import GaussianSet, inverse_sigmoid, sh_coeff_count
from splat_graph.models.geometry import (
    axis_angle_to_quat,
    deg2rad,
    look_at,
    quat_multiply,
    yaw_quat
)
from splat_graph.models.human import ArticulatedTemplate, BodyPoseSequence
from splat_graph.models.scene import EnvironmentMap, SceneGraph, SceneNode, inverse_softplus
from splat_graph.services.deformation import DeformationNet
from splat_graph.services.initialization import anchor_box, box_track, scene_center_and_extent
from splat_graph.services.pose_pipeline import project_box
from splat_graph.services.rasterizer import render
from splat_graph.services.scene_graph import assemble, assemble_world
from splat_graph.services.sh import rgb_to_sh
from splat_graph.services.skinning import skin_logits, tessellate_template
from splat_graph.utils.helpers import deep_update

logger = logging.getLogger(__name__)

# Independent RNG streams derived from the spec seed
STREAM_BACKGROUND = 1
STREAM_ACTORS = 2
STREAM_LIDAR = 3
STREAM_TRACK_NOISE = 4
STREAM_DETECTIONS = 5
STREAM_JITTER = 6

SKY_OPACITY = 0.01
LIDAR_MIN_OPACITY = 0.5
MIN_FRUSTUM_FRACTION = 0.8
CAMERA_HEIGHT = 1.6


class SyntheticSceneSpec(BaseModel):
    """Parameters of the procedural ground-truth scene"""
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    seed: int = 0
    scene_id: str = "synthetic"
    frames: int = Field(default=60, ge=2)
    frame_rate: float = Field(default=10.0, gt=0.0)
    width: int = Field(default=96, gt=0)
    height: int = Field(default=64, gt=0)
    camera_yaws_deg: Tuple[float, ...] = (0.0, 40.0, -40.0)
    focal_factor: float = Field(default=0.9, gt=0.0)
    ego_speed: float = Field(default=1.0, ge=0.0)
    background_blobs: int = Field(default=4000, ge=0)
    rigid_blobs: int = Field(default=400, ge=1)
    deformable_blobs: int = Field(default=200, ge=1)
    deformation_scale: float = Field(default=0.05, ge=0.0)
    deform_hidden: int = Field(default=64, gt=0)
    deform_layers: int = Field(default=2, gt=0)
    embedding_dim: int = Field(default=16, gt=0)
    depth_fraction: float = Field(default=0.02, gt=0.0, le=1.0)
    # Actor scripts: start offset ahead of the ego vehicle (x, y) and velocity (vx, vy) in m/s
    rigid_start: Tuple[float, float] = (10.0, -2.5)
    rigid_velocity: Tuple[float, float] = (2.0, 0.0)
    human_start: Tuple[float, float] = (9.0, 2.5)
    human_velocity: Tuple[float, float] = (1.0, -0.3)
    deformable_start: Tuple[float, float] = (13.0, 3.5)
    deformable_velocity: Tuple[float, float] = (1.0, -0.8)
    gait_amplitude_deg: float = Field(default=25.0, ge=0.0)
    # Observation noise
    translation_noise: float = Field(default=0.0, ge=0.0)
    yaw_noise_deg: float = Field(default=0.0, ge=0.0)
    pose_noise_deg: float = Field(default=0.0, ge=0.0)
    box_noise_px: float = Field(default=0.0, ge=0.0)
    detection_drop_rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    blob_jitter: float = Field(default=0.0, ge=0.0)
    clutter_detections: bool = True

    @model_validator(mode="after")
    def check_rig(self) -> "SyntheticSceneSpec":
        if not self.camera_yaws_deg:
            raise ValueError("at least one camera is required")
        return self


def load_synthetic_spec(path: Optional[Path] = None, overrides: Optional[dict] = None) -> SyntheticSceneSpec:
    """Spec from an optional JSON file plus field overrides"""
    data: dict = {}
    if path is not None:
        try:
            data = orjson.loads(Path(path).read_bytes())
        except FileNotFoundError:
            raise SyntheticSpecError(f"Synthetic spec not found: {path}")
        except orjson.JSONDecodeError as e:
            raise SyntheticSpecError(f"Synthetic spec {path} is not valid JSON: {e}")
    data = deep_update(data, overrides or {})
    try:
        return SyntheticSceneSpec.model_validate(data)
    except PydanticValidationError as e:
        raise SyntheticSpecError(f"Invalid synthetic spec: {e}")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


# Procedural biped

BIPED_JOINTS = (
    # name, position, parent
    ('pelvis', (0.0, 0.0, 0.0), -1),
    ('chest', (0.0, 0.0, 0.45), 0),
    ('head', (0.0, 0.0, 0.62), 1),
    ('left_hip', (0.0, 0.12, -0.05), 0),
    ('left_knee', (0.0, 0.12, -0.45), 3),
    ('right_hip', (0.0, -0.12, -0.05), 0),
    ('right_knee', (0.0, -0.12, -0.45), 5),
    ('left_shoulder', (0.0, 0.22, 0.45), 1),
    ('right_shoulder', (0.0, -0.22, 0.45), 1),
)

# start, end, owning joint, blend joint at the start ring, radius, rgb
BIPED_SEGMENTS = (
    ((0.0, 0.0, -0.05), (0.0, 0.0, 0.55), 1, 0, 0.15, (0.75, 0.2, 0.2)),
    ((0.0, 0.0, 0.62), (0.0, 0.0, 0.85), 2, 1, 0.10, (0.9, 0.7, 0.55)),
    ((0.0, 0.12, -0.05), (0.0, 0.12, -0.45), 3, 0, 0.07, (0.2, 0.25, 0.55)),
    ((0.0, 0.12, -0.45), (0.0, 0.12, -0.85), 4, 3, 0.06, (0.2, 0.25, 0.55)),
    ((0.0, -0.12, -0.05), (0.0, -0.12, -0.45), 5, 0, 0.07, (0.2, 0.25, 0.55)),
    ((0.0, -0.12, -0.45), (0.0, -0.12, -0.85), 6, 5, 0.06, (0.2, 0.25, 0.55)),
    ((0.0, 0.22, 0.45), (0.0, 0.22, 0.0), 7, 1, 0.05, (0.75, 0.2, 0.2)),
    ((0.0, -0.22, 0.45), (0.0, -0.22, 0.0), 8, 1, 0.05, (0.75, 0.2, 0.2)),
)
RING_VERTICES = 8
RINGS = 3
BIPED_HEIGHT = 1.7


def _ring_frame(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    a = np.cross(axis, helper)
    a /= np.linalg.norm(a)
    return a, np.cross(axis, a)


def biped_template(dtype: Optional[torch.dtype] = None) -> Tuple[ArticulatedTemplate, np.ndarray]:
    """Nine-joint body of ring-sampled limbs, pelvis at the origin, +z up; also returns vertex colors"""
    dtype = dtype or torch.get_default_dtype()
    K = len(BIPED_JOINTS)
    vertices, radial, colors, faces = [], [], [], []
    weights = []
    for start, end, joint, blend, radius, rgb in BIPED_SEGMENTS:
        start, end = np.asarray(start), np.asarray(end)
        axis = (end - start) / np.linalg.norm(end - start)
        a, b = _ring_frame(axis)
        base = len(vertices)
        for r in range(RINGS):
            s = r / (RINGS - 1)
            center = start + s * (end - start)
            for v in range(RING_VERTICES):
                phi = 2.0 * math.pi * v / RING_VERTICES
                offset = radius * (math.cos(phi) * a + math.sin(phi) * b)
                vertices.append(center + offset)
                radial.append(offset / radius)
                colors.append(rgb)
                w = np.zeros(K)
                if r == 0 and blend != joint:
                    w[joint] = 0.5
                    w[blend] = 0.5
                else:
                    w[joint] = 1.0
                weights.append(w)
        for r in range(RINGS - 1):
            for v in range(RING_VERTICES):
                i0 = base + r * RING_VERTICES + v
                i1 = base + r * RING_VERTICES + (v + 1) % RING_VERTICES
                j0, j1 = i0 + RING_VERTICES, i1 + RING_VERTICES
                faces += [(i0, i1, j1), (i0, j1, j0)]

    vertices = np.asarray(vertices)
    shape_basis = np.stack([
        vertices * np.array([0.0, 0.0, 0.1]),  # height
        np.asarray(radial) * 0.02,  # girth
    ])
    template = ArticulatedTemplate(
        name='biped',
        vertices=torch.as_tensor(vertices, dtype=dtype),
        faces=torch.as_tensor(np.asarray(faces), dtype=torch.long),
        joints=torch.as_tensor(np.asarray([j[1] for j in BIPED_JOINTS]), dtype=dtype),
        parents=[j[2] for j in BIPED_JOINTS],
        skinning=torch.as_tensor(np.asarray(weights).T, dtype=dtype),
        shape_basis=torch.as_tensor(shape_basis, dtype=dtype)
    )
    return template, np.asarray(colors)


def gait_axis_angles(frames: int, amplitude: float) -> np.ndarray:
    """(T, K, 3) joint rotations, each linear in time about a fixed axis"""
    s = np.linspace(-1.0, 1.0, frames)[:, None]
    lateral = np.array([0.0, 1.0, 0.0])
    angles = np.zeros((frames, len(BIPED_JOINTS), 3))
    angles[:, 3] = amplitude * s * lateral
    angles[:, 5] = -amplitude * s * lateral
    angles[:, 4] = 0.5 * amplitude * (s + 1.0) * lateral
    angles[:, 6] = 0.5 * amplitude * (1.0 - s) * lateral
    angles[:, 7] = -amplitude * s * lateral
    angles[:, 8] = amplitude * s * lateral
    return angles


# Scripted motion

@dataclass
class ActorScript:
    track_id: str
    label: str
    dims: Tuple[float, float, float]
    start: Tuple[float, float]
    velocity: Tuple[float, float]

    def tracklet(self, spec: SyntheticSceneSpec, timestamps: np.ndarray) -> Tracklet3D:
        T = timestamps.shape[0]
        ego = spec.ego_speed * timestamps
        vx, vy = self.velocity
        centers = np.stack([
            ego + self.start[0] + vx * timestamps,
            np.full(T, self.start[1]) + vy * timestamps,
            np.full(T, 0.5 * self.dims[2])
        ], axis=-1)
        yaw = math.atan2(vy, spec.ego_speed + vx)
        return Tracklet3D(
            track_id=self.track_id,
            label=self.label,
            centers=centers,
            yaws=np.full(T, yaw),
            dims=np.tile(np.asarray(self.dims, dtype=np.float64), (T, 1)),
            valid=np.ones(T, dtype=bool)
        )


def actor_scripts(spec: SyntheticSceneSpec) -> List[ActorScript]:
    return [
        ActorScript('vehicle_0', 'vehicle', (4.0, 1.8, 1.5), spec.rigid_start, spec.rigid_velocity),
        ActorScript('human_0', 'pedestrian', (0.6, 0.6, BIPED_HEIGHT), spec.human_start, spec.human_velocity),
        ActorScript('cyclist_0', 'cyclist', (1.8, 0.6, 1.6), spec.deformable_start, spec.deformable_velocity),
    ]


def build_cameras(spec: SyntheticSceneSpec, timestamps: np.ndarray, dtype: torch.dtype) -> Dict[Tuple[int, int], Camera]:
    """Front-facing rig riding along +x"""
    W, H = spec.width, spec.height
    f = spec.focal_factor * W
    cameras = {}
    for frame, t in enumerate(timestamps):
        eye = np.array([spec.ego_speed * t, 0.0, CAMERA_HEIGHT])
        for camera_id, yaw_deg in enumerate(spec.camera_yaws_deg):
            yaw = deg2rad(yaw_deg)
            target = eye + np.array([math.cos(yaw), math.sin(yaw), -0.05])
            cameras[(camera_id, frame)] = Camera(
                fx=f, fy=f, cx=(W - 1) / 2.0, cy=(H - 1) / 2.0, width=W, height=H,
                world_to_camera=look_at(eye, target, dtype=torch.float64).to(dtype),
                camera_id=camera_id
            )
    return cameras


def frustum_fraction(tracklet: Tracklet3D, cameras: Dict[Tuple[int, int], Camera], camera_ids: Sequence[int]) -> float:
    """Share of valid frames whose box center lands inside some image"""
    frames = tracklet.valid_frames()
    seen = 0
    for f in frames:
        center = torch.as_tensor(tracklet.centers[f], dtype=torch.float64)
        for c in camera_ids:
            camera = cameras[(c, f)]
            uv, z = camera.to(torch.float64).project(center)
            u, v = float(uv[0]), float(uv[1])
            if float(z) > camera.near and 0.0 <= u < camera.width and 0.0 <= v < camera.height:
                seen += 1
                break
    return seen / max(len(frames), 1)


# Payloads

def _blob_set(points: np.ndarray, colors: np.ndarray, scales: np.ndarray, opacity: float, tag: SourceTag,
              dtype: torch.dtype) -> GaussianSet:
    n = points.shape[0]
    quats = torch.zeros(n, 4, dtype=dtype)
    quats[:, 0] = 1.0
    return GaussianSet(
        opacity_logit=inverse_sigmoid(torch.full((n,), opacity, dtype=torch.float64)).to(dtype),
        means=torch.as_tensor(points, dtype=dtype),
        quats=quats,
        log_scales=torch.as_tensor(np.log(scales), dtype=dtype),
        sh_dc=rgb_to_sh(torch.as_tensor(colors, dtype=dtype)).unsqueeze(1),
        sh_rest=torch.zeros(n, 0, 3, dtype=dtype),
        source_tag=torch.full((n,), int(tag), dtype=torch.long)
    )


def background_payload(spec: SyntheticSceneSpec, rng: np.random.Generator, dtype: torch.dtype) -> GaussianSet:
    """Checkered ground plus two building facades"""
    x_max = spec.ego_speed * spec.frames / spec.frame_rate + 45.0
    n_ground = int(round(0.6 * spec.background_blobs))
    n_wall = spec.background_blobs - n_ground

    ground = np.stack([
        rng.uniform(-5.0, x_max, n_ground), rng.uniform(-14.0, 14.0, n_ground), np.zeros(n_ground)
    ], axis=-1)
    checker = (np.floor(ground[:, 0] / 2.0) + np.floor(ground[:, 1] / 2.0)) % 2
    ground_colors = np.where(checker[:, None] > 0, [0.35, 0.35, 0.38], [0.5, 0.5, 0.45])
    ground_colors = ground_colors + rng.normal(0.0, 0.03, size=ground_colors.shape)
    spacing = math.sqrt((x_max + 5.0) * 28.0 / max(n_ground, 1))
    ground_scales = np.tile([0.6 * spacing, 0.6 * spacing, 0.05], (n_ground, 1))

    side = np.where(rng.uniform(size=n_wall) < 0.5, -10.0, 10.0)
    walls = np.stack([rng.uniform(-5.0, x_max, n_wall), side, rng.uniform(0.0, 8.0, n_wall)], axis=-1)
    band = np.floor(walls[:, 2] / 2.0) % 2
    wall_colors = np.where(band[:, None] > 0, [0.7, 0.6, 0.45], [0.55, 0.45, 0.35])
    wall_colors = wall_colors + rng.normal(0.0, 0.03, size=wall_colors.shape)
    wall_spacing = math.sqrt((x_max + 5.0) * 16.0 / max(n_wall, 1))
    wall_scales = np.tile([0.6 * wall_spacing, 0.05, 0.6 * wall_spacing], (n_wall, 1))

    points = np.concatenate([ground, walls])
    colors = np.clip(np.concatenate([ground_colors, wall_colors]), 0.02, 0.98)
    scales = np.concatenate([ground_scales, wall_scales])
    return _blob_set(points, colors, scales, 0.95, SourceTag.BACKGROUND, dtype)


def box_surface_points(rng: np.random.Generator, count: int, dims: Sequence[float]) -> np.ndarray:
    """Uniform samples on the faces of a centered box"""
    l, w, h = dims
    areas = np.array([w * h, w * h, l * h, l * h, l * w, l * w])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    points = rng.uniform(-0.5, 0.5, size=(count, 3)) * np.asarray(dims)
    axis = faces // 2
    sign = np.where(faces % 2 == 0, -0.5, 0.5)
    points[np.arange(count), axis] = sign * np.asarray(dims)[axis]
    return points


def rigid_payload(spec: SyntheticSceneSpec, rng: np.random.Generator, dims, dtype: torch.dtype) -> GaussianSet:
    points = box_surface_points(rng, spec.rigid_blobs, dims)
    body = np.array([0.15, 0.3, 0.7])
    colors = np.where(points[:, 2:3] < -0.25 * dims[2], [0.1, 0.1, 0.1], body)
    colors = np.clip(colors + rng.normal(0.0, 0.03, size=colors.shape), 0.02, 0.98)
    scales = np.full((spec.rigid_blobs, 3), 0.12)
    return _blob_set(points, colors, scales, 0.95, SourceTag.RIGID, dtype)


def deformable_payload(spec: SyntheticSceneSpec, rng: np.random.Generator, dims, dtype: torch.dtype) -> GaussianSet:
    n = spec.deformable_blobs
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    radii = rng.uniform(0.0, 1.0, size=n) ** (1.0 / 3.0)
    points = directions * radii[:, None] * 0.5 * np.asarray(dims) * 0.9
    colors = np.clip(np.array([0.2, 0.65, 0.3]) + rng.normal(0.0, 0.08, size=(n, 3)), 0.02, 0.98)
    scales = np.full((n, 3), 0.08)
    return _blob_set(points, colors, scales, 0.9, SourceTag.DEFORMABLE, dtype)


def sky_map(dtype: torch.dtype) -> EnvironmentMap:
    """Vertical gradient, pale at the horizon"""
    H, W = 16, 32
    rows = torch.linspace(0.0, 1.0, H, dtype=torch.float64)[:, None]
    zenith = torch.tensor([0.35, 0.55, 0.9], dtype=torch.float64)
    horizon = torch.tensor([0.8, 0.85, 0.95], dtype=torch.float64)
    colors = zenith * (1.0 - rows) + horizon * rows
    texels = inverse_softplus(colors).unsqueeze(1).expand(H, W, 3).clone()
    return EnvironmentMap(texels.to(dtype))


# Scene assembly

def build_gt_scene(
    spec: SyntheticSceneSpec,
    tracklets: Dict[str, Tracklet3D],
    timestamps: np.ndarray,
    template: ArticulatedTemplate,
    template_colors: np.ndarray,
    extent: float,
    dtype: torch.dtype
) -> SceneGraph:
    rng = _rng(spec.seed, STREAM_ACTORS)

    car = tracklets['vehicle_0']
    rigid = SceneNode(
        node_id=car.track_id, label=car.label, kind=NodeKind.RIGID,
        payload=rigid_payload(spec, rng, car.dims[0], dtype),
        pose=box_track(car, dtype)
    )

    person = tracklets['human_0']
    payload, weights = tessellate_template(template, degree=0)
    payload = payload.replace(
        opacity_logit=inverse_sigmoid(torch.full((payload.count,), 0.9, dtype=torch.float64)).to(dtype),
        sh_dc=rgb_to_sh(torch.as_tensor(template_colors, dtype=dtype)).unsqueeze(1)
    )
    joints = torch.as_tensor(gait_axis_angles(spec.frames, deg2rad(spec.gait_amplitude_deg)), dtype=torch.float64)
    quats = axis_angle_to_quat(joints)
    quats[:, template.root] = yaw_quat(torch.as_tensor(person.yaws, dtype=torch.float64))
    human = SceneNode(
        node_id=person.track_id, label=person.label, kind=NodeKind.ARTICULATED,
        payload=payload, pose=box_track(person, dtype, translation_only=True),
        template=template, skin_logits=skin_logits(weights),
        body_pose=BodyPoseSequence(
            quats=quats.to(dtype),
            valid=torch.as_tensor(person.valid),
            provenance=torch.full((spec.frames,), int(PoseProvenance.DETECTED), dtype=torch.long)
        )
    )

    cyclist = tracklets['cyclist_0']
    blobs = deformable_payload(spec, rng, cyclist.dims[0], dtype)
    generator = torch.Generator().manual_seed(spec.seed * 7919 + STREAM_ACTORS)
    embedding = torch.randn(spec.embedding_dim, generator=generator, dtype=torch.float64)
    deformable = SceneNode(
        node_id=cyclist.track_id, label=cyclist.label, kind=NodeKind.DEFORMABLE,
        payload=blobs, pose=box_track(cyclist, dtype),
        embedding=embedding.to(dtype),
        anchors=blobs.means.clone(),
        anchor_box=anchor_box(blobs.means)
    )

    net = DeformationNet.seeded(
        spec.seed, dtype,
        embedding_dim=spec.embedding_dim,
        hidden=spec.deform_hidden,
        layers=spec.deform_layers,
        position_bands=2,
        time_bands=2
    )
    net.randomize_head(spec.deformation_scale, spec.seed + STREAM_ACTORS)
    for p in net.parameters():
        p.requires_grad_(False)

    return SceneGraph(
        scene_id=spec.scene_id,
        background=background_payload(spec, _rng(spec.seed, STREAM_BACKGROUND), dtype),
        sky=sky_map(dtype),
        nodes=[rigid, human, deformable],
        timestamps=torch.as_tensor(timestamps, dtype=torch.float64),
        deformation_net=net,
        scene_extent=extent,
        metadata={'source': 'synthetic', 'seed': spec.seed}
    )


def _label_world(scene: SceneGraph, t: float) -> GaussianSet:
    """World blobs colored by one-hot region class"""
    assembly = assemble(scene, t)
    world = assembly.gaussians.detach()
    onehot = torch.zeros(world.count, 3, dtype=world.dtype)
    for node in scene.nodes:
        rows = assembly.segments.get(node.node_id)
        if rows is None:
            continue
        region = LABEL_REGIONS.get(node.label.lower(), RegionClass.OTHER)
        onehot[rows, int(region) - 1] = 1.0
    return world.replace(
        sh_dc=rgb_to_sh(onehot).unsqueeze(1),
        sh_rest=torch.zeros(world.count, sh_coeff_count(0) - 1, 3, dtype=world.dtype)
    )


def semantic_labels(camera: Camera, label_world: GaussianSet) -> np.ndarray:
    out = render(camera, label_world, None, track_abs_grad=False)
    color = out.color.detach().cpu().numpy()
    labels = np.argmax(color, axis=-1).astype(np.uint8) + 1
    return np.where(color.max(axis=-1) > 0.5, labels, int(RegionClass.NONE)).astype(np.uint8)


def sample_depth(
    rng: np.random.Generator,
    depth: np.ndarray,
    opacity: np.ndarray,
    camera: Camera,
    fraction: float
) -> DepthSamples:
    """Ranges at a random subset of covered pixels"""
    H, W = depth.shape
    candidates = np.nonzero((opacity > LIDAR_MIN_OPACITY).reshape(-1))[0]
    count = min(int(round(fraction * H * W)), candidates.size)
    if count == 0:
        return DepthSamples.empty()
    chosen = np.sort(rng.choice(candidates, size=count, replace=False))
    py, px = chosen // W, chosen % W
    rays = np.stack([(px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, np.ones(count)], axis=-1)
    ranges = depth[py, px] * np.linalg.norm(rays, axis=-1)
    uv = np.stack([px, py], axis=-1).astype(np.float32)
    return DepthSamples(uv, ranges.astype(np.float32))


def noisy_tracklet(tracklet: Tracklet3D, spec: SyntheticSceneSpec, rng: np.random.Generator) -> Tracklet3D:
    """Per-axis Gaussian center noise and yaw noise on valid frames"""
    T = tracklet.frame_count
    centers = tracklet.centers + rng.normal(0.0, spec.translation_noise, size=(T, 3)) * tracklet.valid[:, None]
    yaws = tracklet.yaws + rng.normal(0.0, deg2rad(spec.yaw_noise_deg), size=T) * tracklet.valid
    return Tracklet3D(tracklet.track_id, tracklet.label, centers, yaws, tracklet.dims.copy(), tracklet.valid.copy())


def _rotation_noise(rng: np.random.Generator, shape: Tuple[int, ...], sigma: float) -> torch.Tensor:
    """Axis-angle noise with RMS angle sigma"""
    return torch.as_tensor(rng.normal(0.0, sigma / math.sqrt(3.0), size=shape + (3,)), dtype=torch.float64)


def simulate_detections(
    spec: SyntheticSceneSpec,
    human: Tracklet3D,
    quats: torch.Tensor,
    cameras: Dict[Tuple[int, int], Camera],
    camera_ids: Sequence[int],
    rng: np.random.Generator
) -> Tuple[Dict[int, List[DetectedTracklet]], Dict[int, str]]:
    """Per-camera 2D boxes and noisy body poses of one human, plus the injected association"""
    T, K = quats.shape[0], quats.shape[1]
    detections: Dict[int, List[DetectedTracklet]] = {c: [] for c in camera_ids}
    association: Dict[int, str] = {}
    for c in camera_ids:
        boxes = np.zeros((T, 4))
        valid = np.zeros(T, dtype=bool)
        for f in range(T):
            box = project_box(human, f, cameras[(c, f)])
            if box is None:
                continue
            boxes[f] = box + rng.normal(0.0, spec.box_noise_px, size=4)
            valid[f] = True
        if not valid.any():
            continue
        kept = valid & (rng.uniform(size=T) >= spec.detection_drop_rate)
        noise = axis_angle_to_quat(_rotation_noise(rng, (T, K), deg2rad(spec.pose_noise_deg)))
        poses = quat_multiply(quats.to(torch.float64), noise).numpy()
        det_id = f"{human.track_id}@cam{c}"
        camera = cameras[(c, 0)]
        detected = DetectedTracklet(c, det_id, boxes, kept, poses, kept.copy())
        detections[c].append(detected.clamp(camera.width, camera.height))
        association[c] = det_id
        if spec.clutter_detections:
            widths = (boxes[:, 2] - boxes[:, 0])[:, None]
            shifted = boxes + np.concatenate([3.0 * widths, np.zeros_like(widths)] * 2, axis=1)
            detections[c].append(DetectedTracklet(
                c, f"clutter@cam{c}", shifted, kept.copy(), np.tile([1.0, 0.0, 0.0, 0.0], (T, K, 1)),
                np.zeros(T, dtype=bool)
            ).clamp(camera.width, camera.height))
    return detections, association


@dataclass
class SyntheticResult:
    dataset: SceneDataset
    scene: SceneGraph
    association: Dict[str, Dict[int, str]]  # track id -> camera -> det id
    gt_tracklets: List[Tracklet3D]


def generate_synthetic(spec: Optional[SyntheticSceneSpec] = None, dtype: Optional[torch.dtype] = None) -> SyntheticResult:
    """Ground-truth scene and the dataset rendered from it, a pure function of the spec"""
    spec = spec or SyntheticSceneSpec()
    dtype = dtype or torch.get_default_dtype()
    timestamps = np.arange(spec.frames, dtype=np.float64) / spec.frame_rate
    cameras = build_cameras(spec, timestamps, dtype)
    camera_ids = list(range(len(spec.camera_yaws_deg)))

    gt_tracklets = {s.track_id: s.tracklet(spec, timestamps) for s in actor_scripts(spec)}
    for tracklet in gt_tracklets.values():
        fraction = frustum_fraction(tracklet, cameras, camera_ids)
        if fraction < MIN_FRUSTUM_FRACTION:
            raise SyntheticSpecError(
                f"Actor {tracklet.track_id} is in view for {fraction:.0%} of frames, "
                f"need {MIN_FRUSTUM_FRACTION:.0%}", field=tracklet.track_id
            )

    template, template_colors = biped_template(dtype)
    rig_only = SceneDataset(spec.scene_id, timestamps, cameras, {})
    _, extent = scene_center_and_extent(rig_only)
    scene = build_gt_scene(spec, gt_tracklets, timestamps, template, template_colors, extent, dtype)

    lidar_rng = _rng(spec.seed, STREAM_LIDAR)
    images, depth, sky, semantic = {}, {}, {}, {}
    with torch.no_grad():
        for frame in range(spec.frames):
            world = assemble_world(scene, frame).detach()
            labels = _label_world(scene, frame)
            for c in camera_ids:
                camera = cameras[(c, frame)]
                out = render(camera, world, scene.sky, track_abs_grad=False)
                key = (c, frame)
                images[key] = out.color.clamp(0.0, 1.0).cpu().numpy().astype(np.float32)
                opacity = out.opacity.cpu().numpy()
                sky[key] = opacity < SKY_OPACITY
                depth[key] = sample_depth(lidar_rng, out.depth.cpu().numpy().astype(np.float64), opacity,
                                          camera, spec.depth_fraction)
                semantic[key] = semantic_labels(camera, labels)

    noise_rng = _rng(spec.seed, STREAM_TRACK_NOISE)
    observed = [noisy_tracklet(t, spec, noise_rng) for t in gt_tracklets.values()]
    human = scene.node('human_0')
    detections, association = simulate_detections(
        spec, gt_tracklets['human_0'], human.body_pose.quats.detach(), cameras, camera_ids,
        _rng(spec.seed, STREAM_DETECTIONS)
    )

    dataset = SceneDataset(
        scene_id=spec.scene_id,
        timestamps=timestamps,
        cameras=cameras,
        images=images,
        depth=depth,
        sky_masks=sky,
        semantic_masks=semantic,
        tracklets=observed,
        detections=detections,
        template=template
    )
    logger.info(
        f"Generated synthetic scene {spec.scene_id}: {spec.frames} frames x {len(camera_ids)} cameras, "
        f"{scene.background.count} background blobs, {len(scene.nodes)} actors",
        extra={'scene_id': spec.scene_id}
    )
    return SyntheticResult(dataset, scene, {'human_0': association}, list(gt_tracklets.values()))


def perturb_scene(scene: SceneGraph, spec: SyntheticSceneSpec, observed: Sequence[Tracklet3D]) -> SceneGraph:
    """Ground-truth scene re-posed on observed boxes with jittered blob means"""

    rng = _rng(spec.seed, STREAM_JITTER)
    perturbed = scene.clone()

    def jitter(payload: GaussianSet) -> GaussianSet:
        noise = torch.as_tensor(rng.normal(0.0, spec.blob_jitter, size=(payload.count, 3)), dtype=payload.dtype)
        return payload.replace(means=payload.means + noise)

    perturbed.background = jitter(perturbed.background)
    by_id = {t.track_id: t for t in observed}
    for node in perturbed.nodes:
        node.payload = jitter(node.payload)
        tracklet = by_id.get(node.node_id)
        if tracklet is not None:
            node.pose = box_track(tracklet, scene.dtype, translation_only=node.kind == NodeKind.ARTICULATED)
        if node.kind == NodeKind.ARTICULATED and spec.pose_noise_deg > 0:
            quats = node.body_pose.quats.detach().to(torch.float64)
            noise = axis_angle_to_quat(_rotation_noise(rng, tuple(quats.shape[:2]), deg2rad(spec.pose_noise_deg)))
            noise[:, node.template.root] = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)
            node.body_pose = node.body_pose.replace(quats=quat_multiply(quats, noise).to(scene.dtype))
    return perturbed


__all__ = [
    'SyntheticSceneSpec',
    'SyntheticResult',
    'ActorScript',
    'load_synthetic_spec',
    'biped_template',
    'gait_axis_angles',
    'actor_scripts',
    'build_cameras',
    'frustum_fraction',
    'background_payload',
    'box_surface_points',
    'build_gt_scene',
    'sample_depth',
    'noisy_tracklet',
    'simulate_detections',
    'generate_synthetic',
    'perturb_scene'
]
