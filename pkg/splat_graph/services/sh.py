import torch

from splat_graph.core.errors import ValidationError
from splat_graph.models.gaussians import sh_coeff_count

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396
]
C3 = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435
]


def sh_basis(degree: int, dirs: torch.Tensor) -> torch.Tensor:
    """Real SH basis values (..., (degree+1)²) at unit directions"""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    basis = [torch.full_like(x, C0)]
    if degree > 0:
        basis += [-C1 * y, C1 * z, -C1 * x]
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        basis += [
            C2[0] * xy,
            C2[1] * yz,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * xz,
            C2[4] * (xx - yy),
        ]
    if degree > 2:
        basis += [
            C3[0] * y * (3 * xx - yy),
            C3[1] * xy * z,
            C3[2] * y * (4 * zz - xx - yy),
            C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            C3[4] * x * (4 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3 * yy),
        ]
    return torch.stack(basis, dim=-1)


def eval_sh_raw(sh: torch.Tensor, dirs: torch.Tensor, degree: int) -> torch.Tensor:
    """Σ coeff · basis, no offset or clamp; sh is (..., K, 3)"""
    if not 0 <= degree <= 3:
        raise ValidationError(f"SH degree must be in 0..3, got {degree}", field='degree')
    if sh.shape[-2] != sh_coeff_count(degree):
        raise ValidationError(
            f"SH block has {sh.shape[-2]} coefficients, degree {degree} needs {sh_coeff_count(degree)}",
            field='sh'
        )
    basis = sh_basis(degree, dirs)
    return (basis.unsqueeze(-1) * sh).sum(dim=-2)


def eval_sh(sh: torch.Tensor, dirs: torch.Tensor, degree: int) -> torch.Tensor:
    """View-dependent rgb, offset by 0.5 and clamped at zero"""
    return torch.clamp_min(eval_sh_raw(sh, dirs, degree) + 0.5, 0.0)


def rgb_to_sh(rgb: torch.Tensor) -> torch.Tensor:
    return (rgb - 0.5) / C0


def sh_to_rgb(sh: torch.Tensor) -> torch.Tensor:
    return sh * C0 + 0.5


__all__ = ['C0', 'sh_basis', 'eval_sh', 'eval_sh_raw', 'rgb_to_sh', 'sh_to_rgb']
