import numpy as np
import pytest

from splat_graph.core.config import load_experiment_config
from splat_graph.core.constants import NodeKind
from splat_graph.core.errors import DatasetError
from splat_graph.models.dataset import PoseInit, Tracklet3D
from splat_graph.services.initialization import (
    background_budget,
    collect_lidar,
    init_scene,
    inside_any_box,
    nearest_neighbor_scales,
    sample_shell,
    scene_center_and_extent
)
from splat_graph.services.pose_pipeline import PosePrepService
from tests.conftest import DTYPE, FAST_OVERRIDES


@pytest.fixture
def prepared(synthetic):
    dataset = synthetic.dataset
    dataset.poses_init = PosePrepService(dataset).run(dtype=DTYPE)
    yield dataset
    dataset.poses_init = None


def test_budget_scales_every_source():
    config = load_experiment_config(overrides=["init.budget_scale=0.01"])
    assert background_budget(config) == {'lidar': 6000, 'near': 2000, 'far': 2000}


def test_nearest_neighbor_scales_on_a_line():
    points = np.array([[float(i), 0.0, 0.0] for i in range(5)])
    scales = nearest_neighbor_scales(points, default=0.3)
    assert scales[2] == pytest.approx(np.sqrt(2.0))
    assert nearest_neighbor_scales(points[:1], default=0.3).tolist() == [0.3]


def test_shell_radii_stay_in_range():
    rng = np.random.default_rng(0)
    center = np.array([1.0, 2.0, 3.0])
    for inverse in (False, True):
        points = sample_shell(rng, 500, center, 2.0, 20.0, inverse=inverse)
        radii = np.linalg.norm(points - center, axis=-1)
        assert radii.min() >= 2.0 - 1e-9
        assert radii.max() <= 20.0 + 1e-9


def test_inside_any_box_respects_point_frames():
    box = Tracklet3D(
        track_id='car', label='car',
        centers=np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]),
        yaws=np.zeros(2),
        dims=np.ones((2, 3)),
        valid=np.ones(2, dtype=bool)
    )
    points = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    assert inside_any_box(points, [box], np.array([0, 1, 0])).tolist() == [True, False, False]
    assert inside_any_box(points, [box]).tolist() == [True, True, False]


def test_scene_extent_covers_camera_centres(synthetic):
    centroid, extent = scene_center_and_extent(synthetic.dataset)
    centers = np.stack([cam.center.numpy() for cam in synthetic.dataset.cameras.values()])
    assert np.linalg.norm(centers - centroid, axis=-1).max() <= extent


def test_init_builds_one_node_per_tracklet(prepared):
    config = load_experiment_config(overrides=FAST_OVERRIDES)
    scene, report = init_scene(prepared, config, dtype=DTYPE)
    kinds = {n.node_id: n.kind for n in scene.nodes}
    assert kinds == {'vehicle_0': NodeKind.RIGID, 'human_0': NodeKind.ARTICULATED, 'cyclist_0': NodeKind.DEFORMABLE}
    assert report.planned == background_budget(config)
    assert report.background == scene.background.count
    assert scene.deformation_net is not None
    assert scene.timestamps.shape[0] == prepared.frame_count

    human = scene.node('human_0')
    assert human.body_pose.frame_count == prepared.frame_count
    assert human.payload.count == prepared.template.vertices.shape[0]
    cyclist = scene.node('cyclist_0')
    assert cyclist.anchors.shape == cyclist.payload.means.shape


def test_init_is_deterministic(prepared):
    config = load_experiment_config(overrides=FAST_OVERRIDES)
    a, _ = init_scene(prepared, config, dtype=DTYPE)
    b, _ = init_scene(prepared, config, dtype=DTYPE)
    assert np.array_equal(a.background.means.detach().numpy(), b.background.means.detach().numpy())


def test_demoted_human_becomes_deformable(synthetic):
    dataset = synthetic.dataset
    dataset.poses_init = PoseInit(demoted=['human_0'])
    try:
        scene, _ = init_scene(dataset, load_experiment_config(overrides=FAST_OVERRIDES), dtype=DTYPE)
    finally:
        dataset.poses_init = None
    assert scene.node('human_0').kind == NodeKind.DEFORMABLE


def test_humans_without_prepared_poses_are_rejected(synthetic):
    with pytest.raises(DatasetError):
        init_scene(synthetic.dataset, load_experiment_config(overrides=FAST_OVERRIDES), dtype=DTYPE)


def test_background_keeps_clear_of_dynamic_boxes(prepared):
    config = load_experiment_config(overrides=FAST_OVERRIDES)
    scene, report = init_scene(prepared, config, dtype=DTYPE)
    assert report.removed_dynamic > 0

    cloud = collect_lidar(prepared)
    lidar_frames = {}
    for point, frame in zip(map(tuple, cloud.points), cloud.frames):
        lidar_frames.setdefault(point, set()).add(int(frame))

    means = scene.background.means.detach().numpy()
    sampled = []
    for i, mean in enumerate(means):
        frames = lidar_frames.get(tuple(mean))
        if frames is None:
            sampled.append(i)
            continue
        point = mean[None, :]
        assert any(
            not inside_any_box(point, prepared.tracklets, np.array([f]))[0] for f in frames
        ), f"lidar blob {i} sits inside a box at its frame"
    # near and far shell samples carry no frame and must avoid every box at every frame
    assert sampled
    assert not inside_any_box(means[sampled], prepared.tracklets).any()
