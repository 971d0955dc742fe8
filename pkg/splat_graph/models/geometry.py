from dataclasses import dataclass
from typing import Optional, Union
import math

import numpy as np
import torch

TensorLike = Union[torch.Tensor, np.ndarray, list, tuple]

# Below this angle axis-angle conversions switch to a Taylor expansion
SMALL_ANGLE = 1e-4


def as_tensor(value: TensorLike, dtype: Optional[torch.dtype] = None, device=None) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        if dtype is not None and value.dtype != dtype:
            value = value.to(dtype)
        return value if device is None else value.to(device)
    return torch.as_tensor(np.asarray(value), dtype=dtype or torch.get_default_dtype(), device=device)


def quat_normalize(q: torch.Tensor) -> torch.Tensor:
    return q / q.norm(dim=-1, keepdim=True).clamp_min(1e-12)


def quat_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Hamilton product a ⊗ b, (w, x, y, z)"""
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], dim=-1)


def quat_conjugate(q: torch.Tensor) -> torch.Tensor:
    return q * q.new_tensor([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: torch.Tensor) -> torch.Tensor:
    """Rotation matrix of a (not necessarily unit) quaternion"""
    q = quat_normalize(q)
    w, x, y, z = q.unbind(-1)
    return torch.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], dim=-1).reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(R: torch.Tensor) -> torch.Tensor:
    """Quaternion of a rotation matrix with non-negative w"""
    m = R.reshape(-1, 3, 3)
    trace = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    candidates = torch.stack([
        torch.stack([1 + trace, m[:, 2, 1] - m[:, 1, 2], m[:, 0, 2] - m[:, 2, 0], m[:, 1, 0] - m[:, 0, 1]], -1),
        torch.stack([m[:, 2, 1] - m[:, 1, 2], 1 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2], m[:, 0, 1] + m[:, 1, 0], m[:, 0, 2] + m[:, 2, 0]], -1),
        torch.stack([m[:, 0, 2] - m[:, 2, 0], m[:, 0, 1] + m[:, 1, 0], 1 - m[:, 0, 0] + m[:, 1, 1] - m[:, 2, 2], m[:, 1, 2] + m[:, 2, 1]], -1),
        torch.stack([m[:, 1, 0] - m[:, 0, 1], m[:, 0, 2] + m[:, 2, 0], m[:, 1, 2] + m[:, 2, 1], 1 - m[:, 0, 0] - m[:, 1, 1] + m[:, 2, 2]], -1),
    ], dim=1)
    # Pick the best-conditioned branch per matrix
    diag = torch.stack([trace, m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], dim=-1)
    best = diag.argmax(dim=-1)
    q = candidates[torch.arange(m.shape[0]), best]
    q = quat_normalize(q)
    q = torch.where(q[:, :1] < 0, -q, q)
    return q.reshape(R.shape[:-2] + (4,))


def apply_matrix(R: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """R v for broadcastable (..., 3, 3) and (..., 3), reduced elementwise per row"""
    return (v.unsqueeze(-2) * R).sum(-1)


def matmul3(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """a @ b for small matrices, reduced elementwise"""
    return (a.unsqueeze(-1) * b.unsqueeze(-3)).sum(-2)


def quat_rotate(q: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    return apply_matrix(quat_to_matrix(q), v)


def axis_angle_to_quat(v: torch.Tensor) -> torch.Tensor:
    """exp map so(3) -> unit quaternion"""
    theta_sq = (v * v).sum(-1, keepdim=True)
    theta = torch.sqrt(theta_sq.clamp_min(SMALL_ANGLE ** 2))
    small = theta_sq < SMALL_ANGLE ** 2
    half = 0.5 * theta
    # sin(θ/2)/θ, Taylor 1/2 - θ²/48 near zero
    k = torch.where(small, 0.5 - theta_sq / 48.0, torch.sin(half) / theta)
    w = torch.where(small, 1.0 - theta_sq / 8.0, torch.cos(half))
    return torch.cat([w, v * k], dim=-1)


def quat_to_axis_angle(q: torch.Tensor) -> torch.Tensor:
    """log map, shortest rotation"""
    q = quat_normalize(q)
    q = torch.where(q[..., :1] < 0, -q, q)
    xyz = q[..., 1:]
    sin_half = xyz.norm(dim=-1, keepdim=True)
    angle = 2.0 * torch.atan2(sin_half, q[..., :1])
    small = sin_half < SMALL_ANGLE
    k = torch.where(small, 2.0 / q[..., :1].clamp_min(1e-12), angle / sin_half.clamp_min(1e-12))
    return xyz * k


def quat_slerp(q0: torch.Tensor, q1: torch.Tensor, w: Union[float, torch.Tensor]) -> torch.Tensor:
    """Spherical interpolation along the shorter arc"""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    w = as_tensor(w, dtype=q0.dtype, device=q0.device)
    if w.dim() < q0.dim():
        w = w.reshape(w.shape + (1,) * (q0.dim() - w.dim()))
    dot = (q0 * q1).sum(-1, keepdim=True)
    q1 = torch.where(dot < 0, -q1, q1)
    dot = dot.abs().clamp(max=1.0)
    omega = torch.acos(dot)
    sin_omega = torch.sin(omega)
    near = sin_omega < 1e-6
    safe = torch.where(near, torch.ones_like(sin_omega), sin_omega)
    a = torch.where(near, 1.0 - w, torch.sin((1.0 - w) * omega) / safe)
    b = torch.where(near, w, torch.sin(w * omega) / safe)
    return quat_normalize(a * q0 + b * q1)


def quat_angle(q0: torch.Tensor, q1: torch.Tensor) -> torch.Tensor:
    """Geodesic angle between rotations, radians"""
    dot = (quat_normalize(q0) * quat_normalize(q1)).sum(-1).abs().clamp(max=1.0)
    return 2.0 * torch.acos(dot)


def yaw_quat(yaw: torch.Tensor) -> torch.Tensor:
    """Rotation about +z"""
    yaw = as_tensor(yaw)
    half = 0.5 * yaw
    zeros = torch.zeros_like(half)
    return torch.stack([torch.cos(half), zeros, zeros, torch.sin(half)], dim=-1)


def align_quat_signs(q: torch.Tensor) -> torch.Tensor:
    """Flip each quaternion of a (T, ..., 4) sequence into the hemisphere of its predecessor"""
    out = [q[0]]
    for i in range(1, q.shape[0]):
        cur = q[i]
        dot = (cur * out[-1]).sum(-1, keepdim=True)
        out.append(torch.where(dot < 0, -cur, cur))
    return torch.stack(out, dim=0)


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform x -> R x + t, rotation kept as a quaternion"""
    rotation: torch.Tensor  # (..., 4) w, x, y, z
    translation: torch.Tensor  # (..., 3)

    @classmethod
    def identity(cls, dtype: Optional[torch.dtype] = None, device=None) -> "SE3Pose":
        dtype = dtype or torch.get_default_dtype()
        return cls(
            torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=dtype, device=device),
            torch.zeros(3, dtype=dtype, device=device)
        )

    @classmethod
    def from_matrix(cls, matrix: TensorLike, dtype: Optional[torch.dtype] = None) -> "SE3Pose":
        m = as_tensor(matrix, dtype=dtype)
        return cls(matrix_to_quat(m[..., :3, :3]), m[..., :3, 3].clone())

    @classmethod
    def from_yaw(cls, yaw: TensorLike, translation: TensorLike, dtype: Optional[torch.dtype] = None) -> "SE3Pose":
        t = as_tensor(translation, dtype=dtype)
        return cls(yaw_quat(as_tensor(yaw, dtype=t.dtype)), t)

    @property
    def dtype(self) -> torch.dtype:
        return self.translation.dtype

    @property
    def rotation_matrix(self) -> torch.Tensor:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> torch.Tensor:
        R = self.rotation_matrix
        bottom = torch.zeros(R.shape[:-2] + (1, 4), dtype=R.dtype, device=R.device)
        bottom[..., 0, 3] = 1.0
        top = torch.cat([R, self.translation.unsqueeze(-1)], dim=-1)
        return torch.cat([top, bottom], dim=-2)

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return apply_matrix(self.rotation_matrix, points) + self.translation

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """self ∘ other: apply other first"""
        return SE3Pose(
            quat_multiply(self.rotation, other.rotation),
            self.translation + quat_rotate(self.rotation, other.translation)
        )

    def inverse(self) -> "SE3Pose":
        conj = quat_conjugate(quat_normalize(self.rotation))
        return SE3Pose(conj, -quat_rotate(conj, self.translation))

    def interpolate(self, other: "SE3Pose", w: float) -> "SE3Pose":
        """lerp translation, slerp rotation"""
        return SE3Pose(
            quat_slerp(self.rotation, other.rotation, w),
            (1.0 - w) * self.translation + w * other.translation
        )

    def to(self, dtype: Optional[torch.dtype] = None, device=None) -> "SE3Pose":
        return SE3Pose(self.rotation.to(dtype=dtype, device=device), self.translation.to(dtype=dtype, device=device))

    def detach(self) -> "SE3Pose":
        return SE3Pose(self.rotation.detach(), self.translation.detach())

    def to_dict(self) -> dict:
        return {
            'rotation': self.rotation.detach().cpu().tolist(),
            'translation': self.translation.detach().cpu().tolist()
        }

    @classmethod
    def from_dict(cls, data: dict, dtype: Optional[torch.dtype] = None) -> "SE3Pose":
        return cls(as_tensor(data['rotation'], dtype=dtype), as_tensor(data['translation'], dtype=dtype))


def look_at(eye: TensorLike, target: TensorLike, up: TensorLike = (0.0, 0.0, 1.0), dtype=None) -> SE3Pose:
    """world-to-camera pose for an OpenCV camera (x right, y down, z forward)"""
    eye = as_tensor(eye, dtype=dtype)
    target = as_tensor(target, dtype=eye.dtype)
    up = as_tensor(up, dtype=eye.dtype)
    forward = target - eye
    forward = forward / forward.norm()
    right = torch.linalg.cross(forward, up)
    if float(right.norm()) < 1e-9:
        right = torch.linalg.cross(forward, as_tensor((0.0, 1.0, 0.0), dtype=eye.dtype))
    right = right / right.norm()
    down = torch.linalg.cross(forward, right)
    R = torch.stack([right, down, forward], dim=0)
    return SE3Pose(matrix_to_quat(R), -(R @ eye))


def deg2rad(value: float) -> float:
    return value * math.pi / 180.0


__all__ = [
    'SE3Pose',
    'as_tensor',
    'quat_normalize',
    'quat_multiply',
    'quat_conjugate',
    'quat_to_matrix',
    'matrix_to_quat',
    'quat_rotate',
    'apply_matrix',
    'matmul3',
    'axis_angle_to_quat',
    'quat_to_axis_angle',
    'quat_slerp',
    'quat_angle',
    'yaw_quat',
    'align_quat_signs',
    'look_at',
    'deg2rad'
]
