import torch

from splat_graph.core.config import load_experiment_config
from splat_graph.models.gaussians import inverse_sigmoid
from splat_graph.services.densification import DensityController
from splat_graph.services.optimizer import SceneOptimizer
from splat_graph.services.rasterizer import render
from splat_graph.services.scene_graph import assemble
from tests.conftest import DTYPE


def controller(scene, *overrides):
    config = load_experiment_config(overrides=("trainer.iterations=30000",) + overrides)
    return DensityController(SceneOptimizer(scene, config), config)


def flag_gradient(density, owner, row, value=1.0):
    accum, denom = density._stats(owner)
    accum[row] = value
    denom[row] = 1.0


def test_schedule_windows(mini_scene):
    density = controller(mini_scene)
    assert not density.is_densify_step(0)
    assert density.is_densify_step(500)
    assert not density.is_densify_step(550)
    assert not density.is_densify_step(18000)
    assert density.is_opacity_reset_step(3000)
    assert not density.is_opacity_reset_step(21000)


def test_no_gradient_means_no_change(mini_scene):
    density = controller(mini_scene)
    before = density.blob_count()
    report = density.densify_and_prune(500)
    assert (report.cloned, report.split, report.pruned) == (0, 0, 0)
    assert density.blob_count() == before


def test_small_blob_over_threshold_is_cloned(mini_scene):
    density = controller(mini_scene, "densify.scale_threshold=1.0")
    flag_gradient(density, 'parked', 0)
    report = density.densify_and_prune(500)
    assert report.cloned == 1 and report.split == 0
    payload = mini_scene.node('parked').payload
    assert payload.count == 3
    assert torch.equal(payload.means[2], payload.means[0])


def test_large_blob_over_threshold_is_split(mini_scene):
    density = controller(mini_scene)
    parent_scale = mini_scene.node('parked').payload.scales[1].detach().clone()
    flag_gradient(density, 'parked', 1)
    report = density.densify_and_prune(500)
    assert report.split == 1 and report.cloned == 0
    payload = mini_scene.node('parked').payload
    assert payload.count == 3
    assert torch.allclose(payload.scales[-1], parent_scale / 1.6, atol=1e-12)


def test_transparent_blobs_are_pruned(mini_scene):
    logits = mini_scene.background.opacity_logit.clone()
    logits[2] = inverse_sigmoid(torch.tensor(1e-3, dtype=DTYPE))
    mini_scene.background = mini_scene.background.replace(opacity_logit=logits)
    density = controller(mini_scene)
    report = density.densify_and_prune(500)
    assert report.pruned == 1
    assert mini_scene.background.count == 3


def test_ceiling_skips_growth(mini_scene):
    density = controller(mini_scene, "densify.max_blobs=4")
    flag_gradient(density, 'parked', 0)
    report = density.densify_and_prune(500)
    assert report.skipped
    assert density.blob_count() == 8


def test_growth_is_capped_at_the_ceiling(mini_scene):
    density = controller(mini_scene, "densify.max_blobs=9", "densify.scale_threshold=1.0")
    flag_gradient(density, 'parked', 0, value=1.0)
    flag_gradient(density, 'parked', 1, value=2.0)
    flag_gradient(density, 'background', 3, value=0.5)
    report = density.densify_and_prune(500)
    assert not report.skipped
    assert (report.cloned, report.deferred) == (1, 2)
    assert density.blob_count() == 9
    payload = mini_scene.node('parked').payload
    assert torch.equal(payload.means[2], payload.means[1])


def test_split_near_the_ceiling_stays_below_it(mini_scene):
    density = controller(mini_scene, "densify.max_blobs=10")
    for row in range(4):
        flag_gradient(density, 'background', row)
    report = density.densify_and_prune(500)
    assert report.split == 2 and report.deferred == 2
    assert density.blob_count() <= 10


def test_opacity_reset_caps_every_owner(mini_scene):
    density = controller(mini_scene)
    density.reset_opacity(3000)
    for opacity in (mini_scene.background.opacity, mini_scene.node('moving').payload.opacity):
        assert bool((opacity <= 0.01 + 1e-12).all())


def test_stats_accumulate_visible_blobs(mini_scene, camera):
    density = controller(mini_scene)
    assembly = assemble(mini_scene, 0)
    out = render(camera, assembly.gaussians, mini_scene.sky)
    out.color.sum().backward()
    density.add_stats(assembly, out)
    assert float(density.denom['background'].sum()) > 0
    assert density.mean_grads('parked').shape == (2,)


def test_stats_reset_after_densification(mini_scene):
    density = controller(mini_scene)
    flag_gradient(density, 'parked', 0, value=0.0)
    density.densify_and_prune(500)
    assert density.grad_accum == {}
