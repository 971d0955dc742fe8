import math

import numpy as np
import pytest
import torch

from splat_graph.core.config import ExperimentConfig, load_experiment_config
from splat_graph.core.constants import NodeKind, SourceTag
from splat_graph.models.camera import Camera
from splat_graph.models.gaussians import GaussianSet, inverse_sigmoid
from splat_graph.models.geometry import SE3Pose, look_at
from splat_graph.models.human import ArticulatedTemplate, BodyPoseSequence
from splat_graph.models.scene import EnvironmentMap, SceneGraph, SceneNode, TrackedPose
from splat_graph.services.deformation import DeformationNet
from splat_graph.services.initialization import anchor_box
from splat_graph.services.skinning import skin_logits, tessellate_template
from splat_graph.services.synthetic import SyntheticSceneSpec, generate_synthetic

DTYPE = torch.float64

# Overrides that keep initialisation and training cheap on the tiny synthetic scene
FAST_OVERRIDES = (
    "init.budget_scale=0.001",
    "model.env_map_height=8",
    "model.env_map_width=16",
    "model.deform_hidden=16",
    "model.deform_layers=2",
)


def make_blobs(
    means,
    colors=None,
    opacity=0.5,
    scale=0.05,
    tag: SourceTag = SourceTag.BACKGROUND,
    degree: int = 0
) -> GaussianSet:
    """Isotropic float64 blobs; opacity and scale may be scalars or per-blob sequences"""
    means = torch.as_tensor(np.asarray(means, dtype=np.float64), dtype=DTYPE).reshape(-1, 3)
    n = means.shape[0]
    if colors is None:
        colors = np.full((n, 3), 0.5)
    colors = torch.as_tensor(np.asarray(colors, dtype=np.float64), dtype=DTYPE).reshape(n, 3)
    scales = torch.as_tensor(np.broadcast_to(np.asarray(scale, dtype=np.float64), (n,)).copy(), dtype=DTYPE)
    blobs = GaussianSet.from_points(means, colors, scales, degree=degree, tag=tag)
    opacity = torch.as_tensor(np.broadcast_to(np.asarray(opacity, dtype=np.float64), (n,)).copy(), dtype=DTYPE)
    return blobs.replace(opacity_logit=inverse_sigmoid(opacity))


def axis_camera(size: int = 15, focal: float = 20.0) -> Camera:
    """Camera at the origin looking down +z with the principal point on a pixel center"""
    c = (size - 1) / 2.0
    return Camera(
        fx=focal, fy=focal, cx=c, cy=c, width=size, height=size,
        world_to_camera=SE3Pose.identity(DTYPE)
    )


def chain_template() -> ArticulatedTemplate:
    """Two joints on the y axis and a small quad of vertices"""
    vertices = torch.tensor([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ], dtype=DTYPE)
    skinning = torch.tensor([
        [1.0, 1.0, 0.5, 0.0],
        [0.0, 0.0, 0.5, 1.0],
    ], dtype=DTYPE)
    return ArticulatedTemplate(
        name='chain',
        vertices=vertices,
        faces=torch.tensor([[0, 1, 2], [0, 2, 3]], dtype=torch.long),
        joints=torch.tensor([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=DTYPE),
        parents=[-1, 0],
        skinning=skinning,
        shape_basis=torch.zeros(1, 4, 3, dtype=DTYPE)
    )


def rigid_node(node_id: str, frames: int, payload: GaussianSet, pose: SE3Pose = None) -> SceneNode:
    pose = pose or SE3Pose.identity(DTYPE)
    return SceneNode(
        node_id=node_id, label='vehicle', kind=NodeKind.RIGID,
        payload=payload.with_tag(SourceTag.RIGID),
        pose=TrackedPose.static(pose, frames)
    )


def moving_pose(frames: int, step=(0.5, 0.0, 0.0), start=(0.0, 0.0, 6.0)) -> TrackedPose:
    poses = [
        SE3Pose(
            torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE),
            torch.tensor([start[0] + f * step[0], start[1] + f * step[1], start[2] + f * step[2]], dtype=DTYPE)
        )
        for f in range(frames)
    ]
    return TrackedPose.from_poses(poses, DTYPE)


def articulated_node(node_id: str, frames: int) -> SceneNode:
    """Chain template at rest walking along +y"""
    template = chain_template()
    payload, weights = tessellate_template(template)
    return SceneNode(
        node_id=node_id, label='pedestrian', kind=NodeKind.ARTICULATED,
        payload=payload, pose=moving_pose(frames, step=(0.0, 0.2, 0.0)),
        template=template, skin_logits=skin_logits(weights),
        body_pose=BodyPoseSequence.rest(frames, template.joint_count, DTYPE)
    )


def deformable_node(node_id: str, frames: int) -> SceneNode:
    payload = make_blobs([[0.0, 0.0, 0.0], [0.3, 0.1, 0.0], [0.0, 0.2, 0.3]], tag=SourceTag.DEFORMABLE)
    return SceneNode(
        node_id=node_id, label='cyclist', kind=NodeKind.DEFORMABLE,
        payload=payload, pose=moving_pose(frames, step=(0.0, 0.0, 0.1)),
        embedding=torch.zeros(4, dtype=DTYPE),
        anchors=payload.means.clone(),
        anchor_box=anchor_box(payload.means)
    )


def small_net(seed: int = 0) -> DeformationNet:
    return DeformationNet.seeded(seed, DTYPE, embedding_dim=4, hidden=8, layers=2, position_bands=2, time_bands=2)


@pytest.fixture
def camera() -> Camera:
    return axis_camera()


@pytest.fixture
def oblique_camera() -> Camera:
    return Camera(
        fx=24.0, fy=24.0, cx=15.5, cy=11.5, width=32, height=24,
        world_to_camera=look_at((0.0, -6.0, 1.0), (0.0, 0.0, 0.5), dtype=DTYPE)
    )


@pytest.fixture
def random_blobs() -> GaussianSet:
    rng = np.random.default_rng(7)
    n = 12
    means = np.stack([rng.uniform(-1.0, 1.0, n), rng.uniform(-1.0, 1.0, n), rng.uniform(3.0, 8.0, n)], axis=-1)
    return make_blobs(means, rng.uniform(0.1, 0.9, (n, 3)), rng.uniform(0.2, 0.8, n), rng.uniform(0.05, 0.3, n))


@pytest.fixture
def template() -> ArticulatedTemplate:
    return chain_template()


@pytest.fixture
def mini_scene() -> SceneGraph:
    """Background quad, one static and one moving rigid node over four frames"""
    frames = 4
    background = make_blobs(
        [[-1.0, -1.0, 10.0], [1.0, -1.0, 10.0], [1.0, 1.0, 10.0], [-1.0, 1.0, 10.0]],
        colors=[[0.2, 0.3, 0.4]] * 4, opacity=0.9, scale=0.8
    )
    box = make_blobs([[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]], colors=[[0.9, 0.1, 0.1]] * 2, opacity=0.8, scale=0.2)
    parked = rigid_node('parked', frames, box, SE3Pose(
        torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE), torch.tensor([-1.0, 0.5, 7.0], dtype=DTYPE)
    ))
    moving = SceneNode(
        node_id='moving', label='vehicle', kind=NodeKind.RIGID,
        payload=box.with_tag(SourceTag.RIGID), pose=moving_pose(frames)
    )
    return SceneGraph(
        scene_id='mini',
        background=background,
        sky=EnvironmentMap.constant(4, 8, (0.6, 0.7, 0.9), DTYPE),
        nodes=[parked, moving],
        timestamps=torch.arange(frames, dtype=DTYPE) * 0.1
    )


@pytest.fixture
def rest_body_pose():
    def build(frames: int, joints: int) -> BodyPoseSequence:
        return BodyPoseSequence.rest(frames, joints, DTYPE)
    return build


@pytest.fixture(scope="session")
def synthetic_spec() -> SyntheticSceneSpec:
    return SyntheticSceneSpec(
        seed=3,
        scene_id='tiny',
        frames=10,
        width=32,
        height=24,
        background_blobs=240,
        rigid_blobs=40,
        deformable_blobs=30,
        deform_hidden=16,
        deform_layers=2,
        depth_fraction=0.05
    )


@pytest.fixture(scope="session")
def synthetic(synthetic_spec):
    return generate_synthetic(synthetic_spec, dtype=DTYPE)


@pytest.fixture
def fast_config() -> ExperimentConfig:
    return load_experiment_config(overrides=FAST_OVERRIDES + ("trainer.iterations=3",))


def rotation_z(angle: float) -> torch.Tensor:
    return torch.tensor([math.cos(angle / 2.0), 0.0, 0.0, math.sin(angle / 2.0)], dtype=DTYPE)
