from types import SimpleNamespace

import numpy as np
import pytest
import torch

from splat_graph.core.config import (
    ExperimentConfig,
    LearningRateConfig,
    Schedule,
    TrainerConfig,
    load_experiment_config
)
from splat_graph.core.errors import TrainingDivergedError
from splat_graph.services.metrics import MetricsTable
from splat_graph.services.storage import load_checkpoint
from splat_graph.services.trainer import METRICS_FILE, RESOLVED_CONFIG, Trainer, depth_target
from tests.conftest import DTYPE, FAST_OVERRIDES


def trainer_for(synthetic, config, out_dir=None) -> Trainer:
    return Trainer(synthetic.dataset, config, out_dir=out_dir, scene=synthetic.scene.clone(), dtype=DTYPE)


def test_views_cycle_cameras_then_training_frames(synthetic, fast_config):
    trainer = trainer_for(synthetic, fast_config)
    assert trainer.test_frames == [0]
    assert trainer.view(0) == (0, 1)
    assert trainer.view(1) == (1, 1)
    assert trainer.view(3) == (0, 2)
    assert trainer.view(27) == (0, 1)


def test_holdout_can_be_disabled(synthetic):
    config = load_experiment_config(overrides=FAST_OVERRIDES + ("trainer.holdout_test_frames=false",))
    trainer = trainer_for(synthetic, config)
    assert trainer.test_frames == []
    assert trainer.view(0) == (0, 0)


def test_targets_are_cached(synthetic, fast_config):
    trainer = trainer_for(synthetic, fast_config)
    assert trainer.target(0, 1) is trainer.target(0, 1)


def test_depth_target_is_sparse(synthetic):
    dataset = synthetic.dataset
    (camera_id, frame), samples = next((k, v) for k, v in sorted(dataset.depth.items()) if v.count)
    depth = depth_target(dataset, camera_id, frame, DTYPE)
    camera = dataset.camera(camera_id, frame)
    assert depth.shape == (camera.height, camera.width)
    assert 0 < int((depth > 0).sum()) <= samples.count


def test_zero_rates_leave_scene_unchanged(synthetic):
    zero = {name: Schedule(initial=0.0) for name in LearningRateConfig.model_fields}
    config = ExperimentConfig(lr=LearningRateConfig(**zero), trainer=TrainerConfig(iterations=3))
    trainer = trainer_for(synthetic, config)
    before = trainer.scene.clone()
    for i in range(3):
        trainer.train_step(i)
    scene = trainer.scene
    assert torch.equal(scene.background.means, before.background.means)
    assert torch.equal(scene.sky.texels, before.sky.texels)
    for node in scene.nodes:
        assert torch.equal(node.payload.sh_dc, before.node(node.node_id).payload.sh_dc)
        assert torch.equal(node.pose.residual_translation, before.node(node.node_id).pose.residual_translation)
    for a, b in zip(scene.deformation_net.parameters(), before.deformation_net.parameters()):
        assert torch.equal(a, b)


def test_rejected_steps_raise_after_the_limit(synthetic, monkeypatch):
    config = load_experiment_config(overrides=FAST_OVERRIDES + ("trainer.max_rejected_steps=2",))
    trainer = trainer_for(synthetic, config)
    monkeypatch.setattr(
        'splat_graph.services.trainer.compute_losses',
        lambda *args, **kwargs: SimpleNamespace(finite=False)
    )
    trainer.train_step(0)
    assert trainer.rejected == 1
    with pytest.raises(TrainingDivergedError):
        trainer.train_step(1)


def test_training_writes_run_outputs(synthetic, tmp_path):
    config = load_experiment_config(overrides=FAST_OVERRIDES + ("trainer.iterations=2",))
    result = trainer_for(synthetic, config, out_dir=tmp_path).train()
    assert result.iterations == 2
    assert (tmp_path / RESOLVED_CONFIG).exists()
    assert load_experiment_config(tmp_path / RESOLVED_CONFIG) == config
    rows = [(row['step'], row['split']) for row in MetricsTable(tmp_path / METRICS_FILE).read()]
    assert rows == [('2', 'train'), ('2', 'test')]
    assert result.checkpoint == tmp_path / 'checkpoints' / '2.ckpt'
    assert load_checkpoint(result.checkpoint).iteration == 2
    assert np.isfinite(result.last_report.total.item())


@pytest.mark.slow
def test_resume_reproduces_uninterrupted_run(synthetic, tmp_path):
    config = load_experiment_config(overrides=FAST_OVERRIDES + ("trainer.iterations=4",))
    straight = trainer_for(synthetic, config).train().scene

    first = trainer_for(synthetic, config, out_dir=tmp_path)
    for i in range(2):
        first.train_step(i)
        first.iteration += 1
        first.after_step(first.iteration)
    path = first.save('mid')
    resumed = Trainer.resume(path, synthetic.dataset, config, out_dir=tmp_path).train().scene

    assert torch.equal(resumed.background.means, straight.background.means)
    for node in straight.nodes:
        assert torch.equal(resumed.node(node.node_id).payload.sh_dc, node.payload.sh_dc)
