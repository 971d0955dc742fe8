import pytest
import torch

from splat_graph.core.constants import ALPHA_MAX, LOW_PASS_FILTER, SourceTag
from splat_graph.core.errors import ValidationError
from splat_graph.models.scene import EnvironmentMap
from splat_graph.services.rasterizer import project, render, render_backward, render_dynamic_mask
from tests.conftest import DTYPE, make_blobs

CENTER = (7, 7)


def test_on_axis_blob_projects_to_principal_point(camera):
    proj = project(camera, make_blobs([[0.0, 0.0, 4.0]]))
    assert torch.allclose(proj.mean2d[0], torch.tensor([camera.cx, camera.cy], dtype=DTYPE))


def test_on_axis_isotropic_covariance(camera):
    sigma, depth = 0.1, 4.0
    proj = project(camera, make_blobs([[0.0, 0.0, depth]], scale=sigma))
    expected = ((camera.fx * sigma / depth) ** 2 + LOW_PASS_FILTER) * torch.eye(2, dtype=DTYPE)
    assert torch.allclose(proj.cov2d[0], expected, atol=1e-12)


def test_blob_behind_camera_is_culled(camera):
    proj = project(camera, make_blobs([[0.0, 0.0, -3.0], [0.0, 0.0, 3.0]]))
    assert proj.visible.tolist() == [False, True]


def test_saturated_single_blob(camera):
    blobs = make_blobs([[0.0, 0.0, 3.0]], colors=[[1.0, 0.0, 0.0]], opacity=1.0 - 1e-9, scale=0.05)
    out = render(camera, blobs)
    y, x = CENTER
    assert torch.allclose(out.color[y, x], torch.tensor([ALPHA_MAX, 0.0, 0.0], dtype=DTYPE), atol=1e-9)
    assert out.opacity[y, x].item() == pytest.approx(ALPHA_MAX)


def two_blobs():
    return make_blobs(
        [[0.0, 0.0, 2.0], [0.0, 0.0, 4.0]],
        colors=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        opacity=0.5, scale=0.05
    )


def test_front_to_back_compositing(camera):
    out = render(camera, two_blobs())
    y, x = CENTER
    assert torch.allclose(out.color_gaussians[y, x], torch.tensor([0.5, 0.25, 0.0], dtype=DTYPE), atol=1e-9)
    assert out.opacity[y, x].item() == pytest.approx(0.75, abs=1e-9)


def test_sky_fills_remaining_transmittance(camera):
    sky = EnvironmentMap.constant(4, 8, (0.0, 0.0, 1.0), DTYPE)
    out = render(camera, two_blobs(), sky)
    y, x = CENTER
    assert torch.allclose(out.color[y, x], torch.tensor([0.5, 0.25, 0.25], dtype=DTYPE), atol=1e-5)


def test_input_order_does_not_matter(camera, random_blobs):
    reference = render(camera, random_blobs)
    perm = torch.randperm(random_blobs.count, generator=torch.Generator().manual_seed(0))
    shuffled = render(camera, random_blobs.select(perm))
    assert torch.allclose(shuffled.color, reference.color, atol=1e-12)
    assert torch.allclose(shuffled.depth, reference.depth, atol=1e-12)


def test_transparent_blob_changes_nothing(camera, random_blobs):
    ghost = make_blobs([[0.0, 0.0, 2.5]], colors=[[1.0, 1.0, 1.0]], opacity=1e-9, scale=0.5)
    from splat_graph.models.gaussians import GaussianSet
    with_ghost = render(camera, GaussianSet.concatenate([random_blobs, ghost]))
    without = render(camera, random_blobs)
    assert torch.allclose(with_ghost.color, without.color, atol=1e-12)
    assert torch.allclose(with_ghost.opacity, without.opacity, atol=1e-12)


def test_empty_pixels_render_far_depth(camera):
    out = render(camera, make_blobs([[0.0, 0.0, 3.0]], scale=0.01))
    assert out.depth[0, 0].item() == camera.far
    assert out.opacity[0, 0].item() == 0.0


def test_opacity_bounded(camera, random_blobs):
    out = render(camera, random_blobs)
    assert bool((out.opacity >= 0).all()) and bool((out.opacity <= 1.0).all())


def test_dynamic_mask_of_background_is_zero(camera, random_blobs):
    mask = render_dynamic_mask(camera, random_blobs)
    assert torch.equal(mask, torch.zeros_like(mask))


def test_dynamic_mask_of_rigid_only_equals_opacity(camera, random_blobs):
    rigid = random_blobs.with_tag(SourceTag.RIGID)
    out = render(camera, rigid)
    assert torch.allclose(render_dynamic_mask(camera, rigid), out.opacity, atol=1e-12)


def test_dynamic_mask_bounded_by_opacity(camera, random_blobs):
    tags = torch.tensor([int(SourceTag.RIGID) if i % 2 else int(SourceTag.BACKGROUND)
                         for i in range(random_blobs.count)])
    mixed = random_blobs.replace(source_tag=tags)
    out = render(camera, mixed)
    assert bool((out.dynamic_opacity <= out.opacity + 1e-12).all())


def test_zero_adjoint_gives_zero_gradients(camera, random_blobs):
    adjoint = {'color': torch.zeros(camera.height, camera.width, 3, dtype=DTYPE)}
    grads = render_backward(camera, random_blobs, None, adjoint)
    for value in grads.columns.values():
        assert torch.equal(value, torch.zeros_like(value))


def color_sum(camera, blobs):
    return float(render(camera, blobs, track_abs_grad=False).color.sum())


def test_sh_dc_gradient_matches_finite_differences(camera):
    blobs = make_blobs([[0.1, -0.05, 3.0]], colors=[[0.4, 0.5, 0.6]], opacity=0.6, scale=0.08)
    adjoint = {'color': torch.ones(camera.height, camera.width, 3, dtype=DTYPE)}
    grads = render_backward(camera, blobs, None, adjoint).columns['sh_dc']
    h = 1e-4
    for channel in range(3):
        plus, minus = blobs.sh_dc.clone(), blobs.sh_dc.clone()
        plus[0, 0, channel] += h
        minus[0, 0, channel] -= h
        numeric = (color_sum(camera, blobs.replace(sh_dc=plus)) - color_sum(camera, blobs.replace(sh_dc=minus))) / (2 * h)
        assert grads[0, 0, channel].item() == pytest.approx(numeric, rel=1e-3)


def test_opacity_gradient_matches_finite_differences(camera):
    blobs = make_blobs([[0.0, 0.05, 3.0]], colors=[[0.7, 0.2, 0.4]], opacity=0.4, scale=0.08)
    adjoint = {'color': torch.ones(camera.height, camera.width, 3, dtype=DTYPE)}
    analytic = render_backward(camera, blobs, None, adjoint).columns['opacity_logit'][0].item()
    h = 1e-4
    up = blobs.replace(opacity_logit=blobs.opacity_logit + h)
    down = blobs.replace(opacity_logit=blobs.opacity_logit - h)
    numeric = (color_sum(camera, up) - color_sum(camera, down)) / (2 * h)
    assert analytic == pytest.approx(numeric, rel=1e-3)


def test_sky_texels_receive_gradient(camera):
    sky = EnvironmentMap.constant(4, 8, (0.3, 0.3, 0.3), DTYPE)
    adjoint = {'color': torch.ones(camera.height, camera.width, 3, dtype=DTYPE)}
    grads = render_backward(camera, make_blobs([[0.0, 0.0, 3.0]], scale=0.01), sky, adjoint)
    assert grads.sky is not None
    assert float(grads.sky.abs().sum()) > 0.0


def test_culled_blob_has_zero_mean_gradient(camera):
    blobs = make_blobs([[0.0, 0.0, 3.0], [0.0, 0.0, -3.0]], opacity=0.7, scale=0.1)
    adjoint = {'color': torch.ones(camera.height, camera.width, 3, dtype=DTYPE)}
    grads = render_backward(camera, blobs, None, adjoint).columns['means']
    assert torch.equal(grads[1], torch.zeros(3, dtype=DTYPE))
    assert float(grads[0].abs().sum()) > 0.0


def test_abs_grad_filled_for_visible_blobs(camera):
    blobs = make_blobs([[0.1, 0.0, 3.0]], opacity=0.7, scale=0.1)
    adjoint = {'color': torch.ones(camera.height, camera.width, 3, dtype=DTYPE)}
    grads = render_backward(camera, blobs, None, adjoint)
    assert float(grads.abs_grad[0].norm()) > 0.0


def test_unknown_adjoint_key_is_rejected(camera, random_blobs):
    with pytest.raises(ValidationError):
        render_backward(camera, random_blobs, None, {'normals': torch.zeros(15, 15)})


def test_adjoint_shape_is_checked(camera, random_blobs):
    with pytest.raises(ValidationError):
        render_backward(camera, random_blobs, None, {'depth': torch.zeros(3, 3, dtype=DTYPE)})
