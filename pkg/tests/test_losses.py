import math

import numpy as np
import pytest
import torch

from splat_graph.core.config import TrainerConfig
from splat_graph.core.errors import ValidationError
from splat_graph.services.losses import (
    FrameTarget,
    compute_losses,
    depth_loss,
    dynamic_weights,
    opacity_loss,
    pose_smooth_loss,
    scale_regularizer,
    ssim_map
)
from splat_graph.services.rasterizer import render
from splat_graph.services.scene_graph import assemble_world, insert_node
from tests.conftest import DTYPE, articulated_node, make_blobs, rotation_z


def rendered_frame(scene, camera, t=0):
    return render(camera, assemble_world(scene, t), scene.sky)


def test_perfect_fit_has_zero_image_loss(mini_scene, camera):
    out = rendered_frame(mini_scene, camera)
    target = FrameTarget(image=out.color.detach().clone())
    report = compute_losses(out, target, mini_scene, 0, TrainerConfig(), np.random.default_rng(0))
    assert report.l1.item() == pytest.approx(0.0, abs=1e-12)
    assert report.ssim.item() == pytest.approx(0.0, abs=1e-9)
    assert report.total.item() == pytest.approx(0.0, abs=1e-9)


def test_constant_offset_gives_l1_of_offset(mini_scene, camera):
    out = rendered_frame(mini_scene, camera)
    target = FrameTarget(image=out.color.detach() + 0.1)
    config = TrainerConfig(lambda_r=0.0, dynamic_region_weight=1.0)
    report = compute_losses(out, target, mini_scene, 0, config, np.random.default_rng(0))
    assert report.total.item() == pytest.approx(0.1, rel=1e-9)


def test_dynamic_pixels_are_upweighted():
    dynamic = torch.tensor([[0.9, 0.1], [0.5, 0.51]], dtype=DTYPE)
    weights = dynamic_weights(dynamic, 5.0)
    assert weights.tolist() == [[5.0, 1.0], [1.0, 5.0]]


def test_identical_images_have_unit_ssim(random_blobs, camera):
    image = render(camera, random_blobs).color
    assert torch.allclose(ssim_map(image, image), torch.ones(camera.height, camera.width, dtype=DTYPE), atol=1e-12)


def test_ssim_shape_mismatch_is_rejected():
    with pytest.raises(ValidationError):
        ssim_map(torch.zeros(4, 4, 3, dtype=DTYPE), torch.zeros(4, 5, 3, dtype=DTYPE))


def test_depth_loss_only_counts_returns():
    rendered = torch.full((2, 2), 2.0, dtype=DTYPE)
    sparse = torch.zeros(2, 2, dtype=DTYPE)
    sparse[0, 1] = 4.0
    assert depth_loss(rendered, sparse).item() == pytest.approx(abs(0.25 - 0.5) / 4.0)


def test_opacity_loss_entropy_without_sky():
    opacity = torch.full((3, 3), 0.5, dtype=DTYPE)
    value = opacity_loss(opacity, torch.zeros(3, 3, dtype=torch.bool))
    assert value.item() == pytest.approx(-0.5 * math.log(0.5))


def test_opacity_loss_pushes_sky_to_transparent():
    sky = torch.ones(2, 2, dtype=torch.bool)
    clear = opacity_loss(torch.full((2, 2), 1e-6, dtype=DTYPE), sky)
    foggy = opacity_loss(torch.full((2, 2), 0.9, dtype=DTYPE), sky)
    assert foggy.item() > clear.item()


def test_constant_body_pose_is_smooth(mini_scene):
    scene = insert_node(mini_scene, articulated_node('walker', 4))
    scene.node('walker').body_pose.quats[:, 1] = rotation_z(0.7)
    assert pose_smooth_loss(scene, 1, 1).item() == 0.0


def test_pose_smoothness_penalizes_kinks(mini_scene):
    scene = insert_node(mini_scene, articulated_node('walker', 4))
    scene.node('walker').body_pose.quats[1, 1] = rotation_z(0.5)
    expected = abs(1.0 - math.cos(0.25)) + abs(math.sin(0.25))
    assert pose_smooth_loss(scene, 1, 1).item() == pytest.approx(expected)
    # window leaves the timeline
    assert pose_smooth_loss(scene, 1, 2).item() == 0.0


def test_scale_regularizer_mean_of_largest_axis():
    blobs = make_blobs([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]], scale=[0.1, 0.3])
    assert scale_regularizer(blobs).item() == pytest.approx(0.2)


def test_offset_is_drawn_within_configured_range(mini_scene, camera):
    out = rendered_frame(mini_scene, camera)
    target = FrameTarget(image=out.color.detach())
    config = TrainerConfig(pose_smooth_max_offset=3)
    rng = np.random.default_rng(1)
    deltas = {compute_losses(out, target, mini_scene, 0, config, rng).delta for _ in range(40)}
    assert deltas <= {1, 2, 3}
    assert len(deltas) > 1


def test_image_shape_mismatch_is_rejected(mini_scene, camera):
    out = rendered_frame(mini_scene, camera)
    with pytest.raises(ValidationError):
        compute_losses(out, FrameTarget(image=torch.zeros(3, 3, 3, dtype=DTYPE)), mini_scene, 0, TrainerConfig())
