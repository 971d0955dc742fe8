import numpy as np
import orjson
import pytest
import torch

from splat_graph.core.config import settings
from splat_graph.core.constants import NodeKind
from splat_graph.core.errors import CheckpointError, DatasetError
from splat_graph.models.camera import Camera
from splat_graph.services.pose_pipeline import PosePrepService
from splat_graph.services.rasterizer import render
from splat_graph.services.scene_graph import assemble_world, place_asset
from splat_graph.services.storage import (
    Checkpoint,
    export_node,
    import_node,
    load_checkpoint,
    load_dataset,
    load_template,
    read_image,
    save_checkpoint,
    save_dataset,
    save_template,
    write_image
)
from tests.conftest import DTYPE, axis_camera, chain_template, deformable_node, small_net


def test_checkpoint_round_trip_renders_identically(synthetic, tmp_path):
    scene = synthetic.scene
    path = save_checkpoint(Checkpoint(scene, iteration=7, extra={'note': 'gt'}), tmp_path / 'scene.ckpt')
    restored = load_checkpoint(path)
    assert restored.iteration == 7
    assert restored.extra == {'note': 'gt'}
    assert restored.scene.node_ids() == scene.node_ids()
    camera = synthetic.dataset.camera(0, 3)
    with torch.no_grad():
        a = render(camera, assemble_world(scene, 3), scene.sky).color
        b = render(camera, assemble_world(restored.scene, 3), restored.scene.sky).color
    assert torch.equal(a, b)


def test_checkpoint_keeps_node_kinds(synthetic, tmp_path):
    restored = load_checkpoint(save_checkpoint(Checkpoint(synthetic.scene), tmp_path / 'a.ckpt')).scene
    kinds = {n.node_id: n.kind for n in restored.nodes}
    assert kinds == {'vehicle_0': NodeKind.RIGID, 'human_0': NodeKind.ARTICULATED, 'cyclist_0': NodeKind.DEFORMABLE}
    assert restored.deformation_net is not None


def test_checkpoint_keeps_per_node_nets(mini_scene, tmp_path):
    shared = place_asset(mini_scene, deformable_node('cyclist', 4), 'cyclist', 'moving', deformation_net=small_net(1))
    net = small_net(2)
    net.randomize_head(1.0, seed=2)
    scene = place_asset(shared, deformable_node('rider', 4), 'rider', 'moving', deformation_net=net)
    restored = load_checkpoint(save_checkpoint(Checkpoint(scene), tmp_path / 'nets.ckpt')).scene
    assert restored.node('rider').deformation_net is not None
    assert restored.node('cyclist').deformation_net is None
    with torch.no_grad():
        assert torch.allclose(assemble_world(restored, 2.0).means, assemble_world(scene, 2.0).means, atol=1e-12)


def test_checkpoint_version_mismatch(mini_scene, tmp_path, monkeypatch):
    path = save_checkpoint(Checkpoint(mini_scene), tmp_path / 'old.ckpt')
    monkeypatch.setattr(settings, 'CHECKPOINT_VERSION', settings.CHECKPOINT_VERSION + 1)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_checksum_mismatch(mini_scene, tmp_path):
    path = save_checkpoint(Checkpoint(mini_scene), tmp_path / 'bad.ckpt')
    outer = torch.load(path, weights_only=False)
    payload = bytearray(outer['payload'])
    payload[len(payload) // 2] ^= 0xFF
    outer['payload'] = bytes(payload)
    torch.save(outer, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / 'nowhere.ckpt')


def test_asset_export_import(synthetic, tmp_path):
    path = export_node(synthetic.scene, 'cyclist_0', tmp_path / 'cyclist.asset')
    asset = import_node(path)
    assert asset.node.kind == NodeKind.DEFORMABLE
    assert asset.deformation_net is not None
    assert asset.source_scene == synthetic.scene.scene_id
    assert torch.equal(asset.node.payload.means, synthetic.scene.node('cyclist_0').payload.means)


def test_template_round_trip(tmp_path):
    template = chain_template()
    restored = load_template(save_template(template, tmp_path), dtype=DTYPE)
    assert restored.parents == template.parents
    assert torch.allclose(restored.vertices, template.vertices)
    assert torch.equal(restored.faces, template.faces)
    assert torch.allclose(restored.skinning, template.skinning)


def test_image_quantization(tmp_path):
    image = np.linspace(0.0, 1.0, 4 * 5 * 3).reshape(4, 5, 3)
    write_image(tmp_path / 'a.png', image)
    back = read_image(tmp_path / 'a.png')
    assert back.dtype == np.float32
    assert np.abs(back - image).max() <= 0.5 / 255.0 + 1e-6


def test_dataset_round_trip(synthetic, tmp_path):
    dataset = synthetic.dataset
    dataset.poses_init = PosePrepService(dataset).run(dtype=DTYPE)
    try:
        save_dataset(dataset, tmp_path / 'ds', float_images=True)
        loaded = load_dataset(tmp_path / 'ds', dtype=DTYPE)
    finally:
        dataset.poses_init = None
    assert loaded.scene_id == dataset.scene_id
    assert loaded.frame_count == dataset.frame_count
    assert loaded.camera_ids == dataset.camera_ids
    assert np.array_equal(loaded.image(1, 4), dataset.image(1, 4))
    assert np.array_equal(loaded.sky_masks[(0, 2)], dataset.sky_masks[(0, 2)])
    assert [t.track_id for t in loaded.tracklets] == [t.track_id for t in dataset.tracklets]
    assert 'human_0' in loaded.poses_init.sequences
    assert loaded.template.joint_count == dataset.template.joint_count
    samples, original = loaded.depth[(0, 0)], dataset.depth[(0, 0)]
    assert np.allclose(samples.ranges, original.ranges)


def test_png_dataset_is_quantized(synthetic, tmp_path):
    save_dataset(synthetic.dataset, tmp_path / 'ds')
    loaded = load_dataset(tmp_path / 'ds', dtype=DTYPE)
    assert np.abs(loaded.image(0, 0) - synthetic.dataset.image(0, 0)).max() <= 0.5 / 255.0 + 1e-6


def test_dataset_schema_mismatch(synthetic, tmp_path):
    root = save_dataset(synthetic.dataset, tmp_path / 'ds')
    manifest = orjson.loads((root / 'manifest.json').read_bytes())
    manifest['schema_version'] = 99
    (root / 'manifest.json').write_bytes(orjson.dumps(manifest))
    with pytest.raises(DatasetError):
        load_dataset(root)


def test_missing_dataset(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / 'absent')


def test_camera_dict_round_trip():
    camera = axis_camera()
    again = Camera.from_dict(camera.to_dict(), dtype=DTYPE)
    assert again.fx == camera.fx and again.width == camera.width
    assert torch.allclose(again.world_to_camera.matrix(), camera.world_to_camera.matrix())
