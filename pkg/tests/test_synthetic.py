import numpy as np
import pytest
import torch

from splat_graph.core.constants import NodeKind
from splat_graph.core.errors import SyntheticSpecError
from splat_graph.services.synthetic import (
    SyntheticSceneSpec,
    biped_template,
    gait_axis_angles,
    generate_synthetic,
    load_synthetic_spec,
    perturb_scene
)
from tests.conftest import DTYPE


def test_generation_is_a_pure_function_of_the_spec(synthetic_spec, synthetic):
    again = generate_synthetic(synthetic_spec, dtype=DTYPE)
    for key, image in synthetic.dataset.images.items():
        assert np.array_equal(again.dataset.images[key], image)
    assert torch.equal(again.scene.background.means, synthetic.scene.background.means)


def test_scene_holds_one_actor_of_each_kind(synthetic):
    kinds = {n.node_id: n.kind for n in synthetic.scene.nodes}
    assert kinds == {'vehicle_0': NodeKind.RIGID, 'human_0': NodeKind.ARTICULATED, 'cyclist_0': NodeKind.DEFORMABLE}
    assert synthetic.scene.deformation_net is not None
    assert [t.track_id for t in synthetic.dataset.tracklets] == [t.track_id for t in synthetic.gt_tracklets]


def test_dataset_covers_every_view(synthetic_spec, synthetic):
    dataset = synthetic.dataset
    assert dataset.frame_count == synthetic_spec.frames
    assert dataset.camera_count == len(synthetic_spec.camera_yaws_deg)
    assert len(dataset.images) == dataset.frame_count * dataset.camera_count
    image = dataset.image(0, 0)
    assert image.shape == (synthetic_spec.height, synthetic_spec.width, 3)
    assert image.min() >= 0.0 and image.max() <= 1.0
    assert any(mask.any() for mask in dataset.sky_masks.values())
    assert sum(samples.count for samples in dataset.depth.values()) > 0


def test_detections_carry_the_injected_association(synthetic):
    association = synthetic.association['human_0']
    assert association
    for camera_id, det_id in association.items():
        assert det_id == f"human_0@cam{camera_id}"
        ids = [d.det_id for d in synthetic.dataset.detections[camera_id]]
        assert det_id in ids
        assert f"clutter@cam{camera_id}" in ids


def test_clean_spec_observes_exact_boxes(synthetic):
    for observed, truth in zip(synthetic.dataset.tracklets, synthetic.gt_tracklets):
        assert np.array_equal(observed.centers, truth.centers)
        assert np.array_equal(observed.yaws, truth.yaws)


def test_biped_skinning_rows_are_normalized():
    template, colors = biped_template(DTYPE)
    sums = template.skinning.sum(dim=0)
    assert torch.allclose(sums, torch.ones_like(sums))
    assert colors.shape == (template.vertices.shape[0], 3)
    assert template.parents[0] == -1


def test_gait_is_linear_in_time():
    angles = gait_axis_angles(5, 0.4)
    assert angles.shape == (5, 9, 3)
    assert np.allclose(angles[:, 3, 1], np.linspace(-0.4, 0.4, 5))
    assert np.allclose(angles[:, 0], 0.0)


def test_perturbation_jitters_blob_means(synthetic_spec, synthetic):
    spec = synthetic_spec.model_copy(update={'blob_jitter': 0.05})
    perturbed = perturb_scene(synthetic.scene, spec, synthetic.dataset.tracklets)
    assert perturbed.node_ids() == synthetic.scene.node_ids()
    assert not torch.equal(perturbed.background.means, synthetic.scene.background.means)
    assert torch.equal(perturbed.background.sh_dc, synthetic.scene.background.sh_dc)


def test_actor_out_of_view_is_rejected():
    spec = SyntheticSceneSpec(frames=4, width=16, height=12, background_blobs=10, rigid_start=(-30.0, 0.0))
    with pytest.raises(SyntheticSpecError):
        generate_synthetic(spec, dtype=DTYPE)


def test_spec_file_and_overrides(tmp_path):
    path = tmp_path / 'spec.json'
    path.write_text('{"seed": 5, "frames": 12}')
    spec = load_synthetic_spec(path, overrides={'frames': 20})
    assert (spec.seed, spec.frames) == (5, 20)


@pytest.mark.parametrize("content", ['{"frames": 1}', '{"warp": 3}', '{"camera_yaws_deg": []}', '{not json'])
def test_invalid_spec_files_are_rejected(tmp_path, content):
    path = tmp_path / 'spec.json'
    path.write_text(content)
    with pytest.raises(SyntheticSpecError):
        load_synthetic_spec(path)


def test_missing_spec_file(tmp_path):
    with pytest.raises(SyntheticSpecError):
        load_synthetic_spec(tmp_path / 'absent.json')


def test_camera_at_blends_neighbouring_frames(synthetic):
    dataset = synthetic.dataset
    a, b = dataset.camera(0, 2).world_to_camera, dataset.camera(0, 3).world_to_camera
    mid = dataset.camera_at(0, 2.5)
    assert torch.allclose(mid.world_to_camera.translation, 0.5 * (a.translation + b.translation))
    assert mid.width == dataset.camera(0, 2).width
    assert dataset.camera_at(0, -4.0) is dataset.camera(0, 0)
    assert dataset.camera_at(0, 3.0) is dataset.camera(0, 3)
