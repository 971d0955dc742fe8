import orjson
import pytest

from splat_graph.cli.handlers.common import ASSOCIATION_FILE, GT_CHECKPOINT
from splat_graph.cli.handlers.render import render_times
from splat_graph.cli.main import main
from splat_graph.core.errors import EXIT_INPUT_ERROR, EXIT_OK, ValidationError
from splat_graph.services.storage import load_checkpoint, load_dataset

TINY_SPEC = {
    'seed': 1,
    'scene_id': 'cli',
    'frames': 10,
    'width': 24,
    'height': 16,
    'background_blobs': 150,
    'rigid_blobs': 20,
    'deformable_blobs': 20,
    'deform_hidden': 8,
    'deform_layers': 1,
    'depth_fraction': 0.05
}
FAST_SET = [
    '--set', 'init.budget_scale=0.001',
    '--set', 'model.env_map_height=4',
    '--set', 'model.env_map_width=8',
    '--set', 'model.deform_hidden=8',
]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp('cli')
    spec = root / 'spec.json'
    spec.write_bytes(orjson.dumps(TINY_SPEC))
    out = root / 'dataset'
    assert main(['synth', '--spec', str(spec), '--out', str(out)]) == EXIT_OK
    return out


def test_synth_writes_dataset_and_ground_truth(synth_dir):
    assert (synth_dir / 'manifest.json').exists()
    assert (synth_dir / GT_CHECKPOINT).exists()
    association = orjson.loads((synth_dir / ASSOCIATION_FILE).read_bytes())
    assert 'human_0' in association
    dataset = load_dataset(synth_dir)
    assert dataset.frame_count == 10
    assert load_checkpoint(synth_dir / GT_CHECKPOINT).scene.node_ids() == ['vehicle_0', 'human_0', 'cyclist_0']


def test_missing_dataset_exits_with_input_error(tmp_path):
    code = main(['train', '--dataset', str(tmp_path / 'absent'), '--out', str(tmp_path / 'run')])
    assert code == EXIT_INPUT_ERROR


def test_unknown_override_exits_with_input_error(synth_dir, tmp_path):
    code = main(['train', '--dataset', str(synth_dir), '--out', str(tmp_path / 'run'), '--set', 'trainer.warp=1'])
    assert code == EXIT_INPUT_ERROR


def test_bad_edit_script_exits_with_input_error(synth_dir, tmp_path):
    script = tmp_path / 'edits.json'
    script.write_text('[{"op": "remove", "node": "nobody"}]')
    code = main(['edit', '--checkpoint', str(synth_dir / GT_CHECKPOINT), '--script', str(script),
                 '--out', str(tmp_path / 'edited.ckpt')])
    assert code == EXIT_INPUT_ERROR
    assert not (tmp_path / 'edited.ckpt').exists()


def test_render_times():
    assert render_times(0.0, 1.0, 0.5).tolist() == [0.0, 0.5, 1.0]
    assert render_times(2.0, 2.0, 1.0).tolist() == [2.0]
    with pytest.raises(ValidationError):
        render_times(0.0, 1.0, 0.0)
    with pytest.raises(ValidationError):
        render_times(3.0, 1.0, 1.0)


@pytest.mark.slow
def test_full_pipeline(synth_dir, tmp_path, capsys):
    dataset = str(synth_dir)
    assert main(['pose-prep', '--dataset', dataset]) == EXIT_OK
    assert (synth_dir / 'poses_init.json').exists()

    run = tmp_path / 'run'
    assert main(['train', '--dataset', dataset, '--out', str(run), '--iterations', '0'] + FAST_SET) == EXIT_OK
    checkpoint = run / 'checkpoints' / '0.ckpt'
    assert checkpoint.exists()
    assert (run / 'resolved_config.json').exists()

    frames = tmp_path / 'frames'
    assert main(['render', '--checkpoint', str(checkpoint), '--dataset', dataset, '--camera', '0',
                 '--end', '1', '--step', '0.5', '--out', str(frames)]) == EXIT_OK
    assert sorted(p.name for p in (frames / 'cam0').iterdir()) == ['00000.png', '00001.png', '00002.png']

    report = tmp_path / 'eval.json'
    assert main(['eval', '--checkpoint', str(synth_dir / GT_CHECKPOINT), '--dataset', dataset,
                 '--out', str(report)]) == EXIT_OK
    assert orjson.loads(report.read_bytes())['nvs']['full']['psnr'] > 30.0

    asset = tmp_path / 'cyclist.asset'
    assert main(['export', '--checkpoint', str(checkpoint), '--node', 'cyclist_0', '--out', str(asset)]) == EXIT_OK
    script = tmp_path / 'edits.json'
    script.write_text('[{"op": "remove", "node": "vehicle_0"}, '
                      '{"op": "insert", "asset": "cyclist.asset", "node_id": "cyclist_1", "trajectory_from": "cyclist_0"}]')
    edited = tmp_path / 'edited.ckpt'
    assert main(['edit', '--checkpoint', str(checkpoint), '--script', str(script), '--out', str(edited)]) == EXIT_OK
    assert load_checkpoint(edited).scene.node_ids() == ['human_0', 'cyclist_0', 'cyclist_1']
    assert 'cyclist_1' in capsys.readouterr().out
