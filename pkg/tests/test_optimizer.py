import pytest
import torch

from splat_graph.core.config import ExperimentConfig, LearningRateConfig, Schedule, load_experiment_config
from splat_graph.core.errors import ValidationError
from splat_graph.services.losses import FrameTarget, compute_losses
from splat_graph.services.optimizer import NET_GROUP, SKY_GROUP, SceneOptimizer, group_name, split_name
from splat_graph.services.rasterizer import render
from splat_graph.services.scene_graph import assemble_world, place_asset
from tests.conftest import deformable_node, small_net


def loss_step(scene, camera, optimizer, frame=1):
    optimizer.zero_grad()
    out = render(camera, assemble_world(scene, frame), scene.sky)
    target = FrameTarget(image=torch.full_like(out.color.detach(), 0.3))
    compute_losses(out, target, scene, frame, optimizer.config.trainer).total.backward()
    optimizer.step()


def frozen_config() -> ExperimentConfig:
    zero = {name: Schedule(initial=0.0) for name in LearningRateConfig.model_fields}
    return ExperimentConfig(lr=LearningRateConfig(**zero))


def test_group_names_cover_blobs_poses_and_sky(mini_scene):
    optimizer = SceneOptimizer(mini_scene, ExperimentConfig())
    names = optimizer.group_names()
    assert 'background/means' in names
    assert 'parked/sh_rest' in names
    assert 'moving/pose_translation' in names
    assert 'moving/pose_rotation' in names
    assert SKY_GROUP in names


def test_box_poses_can_be_frozen(mini_scene):
    config = load_experiment_config(overrides=["trainer.optimize_box_poses=false"])
    names = SceneOptimizer(mini_scene, config).group_names()
    assert 'moving/pose_translation' not in names


def test_box_translation_schedule(mini_scene):
    config = load_experiment_config(overrides=["trainer.iterations=100"])
    optimizer = SceneOptimizer(mini_scene, config)
    assert optimizer.group('moving/pose_translation')['lr'] == pytest.approx(5e-4)
    optimizer.update_learning_rate(100)
    assert optimizer.group('moving/pose_translation')['lr'] == pytest.approx(1e-4)
    optimizer.update_learning_rate(50)
    assert optimizer.group('moving/pose_translation')['lr'] == pytest.approx((5e-4 * 1e-4) ** 0.5)


def test_mean_rate_scales_with_extent(mini_scene):
    mini_scene.scene_extent = 2.0
    optimizer = SceneOptimizer(mini_scene, ExperimentConfig())
    assert optimizer.group('background/means')['lr'] == pytest.approx(2.0 * 1.6e-4)


def test_unknown_group_is_rejected(mini_scene):
    with pytest.raises(ValidationError):
        SceneOptimizer(mini_scene, ExperimentConfig()).group('nowhere/means')


def test_zero_rates_leave_scene_unchanged(mini_scene, camera):
    before = mini_scene.clone()
    optimizer = SceneOptimizer(mini_scene, frozen_config())
    loss_step(mini_scene, camera, optimizer)
    assert torch.equal(mini_scene.background.means, before.background.means)
    assert torch.equal(mini_scene.node('moving').payload.sh_dc, before.node('moving').payload.sh_dc)
    assert torch.equal(mini_scene.node('moving').pose.residual_translation,
                       before.node('moving').pose.residual_translation)
    assert torch.equal(mini_scene.sky.texels, before.sky.texels)


def test_step_updates_parameters_and_keeps_unit_quaternions(mini_scene, camera):
    before = mini_scene.clone()
    optimizer = SceneOptimizer(mini_scene, ExperimentConfig())
    loss_step(mini_scene, camera, optimizer)
    assert not torch.equal(mini_scene.background.sh_dc, before.background.sh_dc)
    norms = mini_scene.background.quats.detach().norm(dim=-1)
    assert torch.allclose(norms, torch.ones_like(norms), atol=1e-12)


def test_prune_keeps_moments_aligned(mini_scene, camera):
    optimizer = SceneOptimizer(mini_scene, ExperimentConfig())
    loss_step(mini_scene, camera, optimizer)
    optimizer.prune('background', torch.tensor([True, False, True, True]))
    assert mini_scene.background.count == 3
    param = optimizer.group('background/means')['params'][0]
    assert optimizer.optimizer.state[param]['exp_avg'].shape == (3, 3)


def test_extend_appends_rows_with_fresh_moments(mini_scene, camera):
    optimizer = SceneOptimizer(mini_scene, ExperimentConfig())
    loss_step(mini_scene, camera, optimizer)
    optimizer.extend('parked', torch.tensor([1]), {})
    payload = mini_scene.node('parked').payload
    assert payload.count == 3
    assert torch.equal(payload.means[2], payload.means[1])
    state = optimizer.optimizer.state[optimizer.group('parked/means')['params'][0]]
    assert torch.equal(state['exp_avg'][2], torch.zeros(3, dtype=payload.dtype))


def test_group_name_round_trip():
    assert split_name(group_name('human_0', 'skin_logits')) == ('human_0', 'skin_logits')


def test_node_with_own_net_gets_its_own_group(mini_scene):
    shared = place_asset(mini_scene, deformable_node('cyclist', 4), 'cyclist', 'moving', deformation_net=small_net(1))
    scene = place_asset(shared, deformable_node('rider', 4), 'rider', 'moving', deformation_net=small_net(2))
    names = SceneOptimizer(scene, ExperimentConfig()).group_names()
    assert NET_GROUP in names
    assert group_name('rider', NET_GROUP) in names
    assert group_name('cyclist', NET_GROUP) not in names
