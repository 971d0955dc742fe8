from typing import Optional, Tuple
import logging

import torch

from splat_graph.core.constants import TESSELLATION_OPACITY, SourceTag
from splat_graph.core.errors import TemplateError, ValidationError
from splat_graph.models.gaussians import GaussianSet, inverse_sigmoid, se3_transform_set, sh_coeff_count
from splat_graph.models.geometry import (
    SE3Pose,
    apply_matrix,
    quat_multiply,
    quat_normalize,
    quat_to_matrix
)
from splat_graph.models.human import ArticulatedTemplate

logger = logging.getLogger(__name__)

SKIN_LOGIT_EPS = 1e-10


def pose_features(quats: torch.Tensor) -> torch.Tensor:
    """Flattened (R_k - I) for every non-root joint"""
    R = quat_to_matrix(quats[1:])
    eye = torch.eye(3, dtype=R.dtype, device=R.device)
    return (R - eye).reshape(-1)


def shape_vertices(
    template: ArticulatedTemplate,
    betas: Optional[torch.Tensor] = None,
    quats: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Rest vertices plus shape offsets plus optional pose correctives"""
    vertices = template.vertices
    if betas is not None and betas.numel():
        if betas.shape[-1] != template.shape_count:
            raise ValidationError(
                f"Got {betas.shape[-1]} shape parameters, template has {template.shape_count} blendshapes",
                field='betas'
            )
        vertices = vertices + torch.einsum('s,svc->vc', betas.to(vertices.dtype), template.shape_basis)
    if template.pose_basis is not None and quats is not None:
        features = pose_features(quats.to(vertices.dtype))
        vertices = vertices + torch.einsum('p,pvc->vc', features, template.pose_basis)
    return vertices


def joint_locations(template: ArticulatedTemplate, betas: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Joints regressed from shaped vertices when the template carries a regressor"""
    if template.joint_regressor is None:
        return template.joints
    return template.joint_regressor @ shape_vertices(template, betas)


def forward_kinematics(
    template: ArticulatedTemplate,
    quats: torch.Tensor,
    joints: Optional[torch.Tensor] = None
) -> SE3Pose:
    """Per-joint transforms taking rest-pose points to posed points, batched (K,)"""
    if quats.shape[0] != template.joint_count:
        raise ValidationError(
            f"Pose has {quats.shape[0]} joints, template has {template.joint_count}", field='theta'
        )
    joints = template.joints if joints is None else joints
    joints = joints.to(quats.dtype)
    K = template.joint_count
    world_rot = [None] * K
    world_pos = [None] * K
    for k in template.order:
        parent = template.parents[k]
        if parent == -1:
            world_rot[k] = quats[k]
            world_pos[k] = joints[k]
        else:
            world_rot[k] = quat_multiply(world_rot[parent], quats[k])
            offset = joints[k] - joints[parent]
            world_pos[k] = world_pos[parent] + apply_matrix(quat_to_matrix(world_rot[parent]), offset)
    rotations = torch.stack(world_rot, dim=0)
    positions = torch.stack(world_pos, dim=0)
    translations = positions - apply_matrix(quat_to_matrix(rotations), joints)
    return SE3Pose(rotations, translations)


def skin_weights(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=-1)


def skin_logits(weights: torch.Tensor) -> torch.Tensor:
    return torch.log(weights + SKIN_LOGIT_EPS)


def lbs_deform(
    canonical: GaussianSet,
    weights: torch.Tensor,
    transforms: SE3Pose
) -> GaussianSet:
    """Blend per-joint transforms into every blob; other attributes unchanged"""
    if weights.shape[0] != canonical.count:
        raise ValidationError(
            f"Skinning has {weights.shape[0]} rows for {canonical.count} blobs", field='skinning'
        )
    if weights.shape[1] != transforms.rotation.shape[0]:
        raise ValidationError("Skinning columns do not match joint count", field='skinning')
    if canonical.count == 0:
        return canonical

    dtype = canonical.dtype
    weights = weights.to(dtype)
    joint_quats = quat_normalize(transforms.rotation.to(dtype))
    R = quat_to_matrix(joint_quats)
    t = transforms.translation.to(dtype)

    blended_R = torch.einsum('nk,kij->nij', weights, R)
    blended_t = weights @ t
    means = apply_matrix(blended_R, canonical.means) + blended_t

    # Quaternion average, signs aligned to the dominant joint
    dominant = joint_quats[weights.argmax(dim=-1)]
    signs = torch.sign((dominant.unsqueeze(1) * joint_quats.unsqueeze(0)).sum(-1))
    signs = torch.where(signs == 0, torch.ones_like(signs), signs)
    blended_q = quat_normalize(torch.einsum('nk,kc->nc', weights * signs, joint_quats))

    return canonical.replace(means=means, quats=quat_multiply(blended_q, canonical.quats))


def mean_incident_edge_length(vertices: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    """Per-vertex mean length of incident edges, global mean for isolated vertices"""
    V = vertices.shape[0]
    if faces.numel() == 0:
        raise TemplateError("Template has no faces to derive blob scales from")
    edges = torch.cat([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], dim=0)
    edges = torch.sort(edges, dim=1).values
    edges = torch.unique(edges, dim=0)
    lengths = (vertices[edges[:, 0]] - vertices[edges[:, 1]]).norm(dim=-1)

    total = torch.zeros(V, dtype=vertices.dtype, device=vertices.device)
    count = torch.zeros(V, dtype=vertices.dtype, device=vertices.device)
    for column in (0, 1):
        total = total.index_add(0, edges[:, column], lengths)
        count = count.index_add(0, edges[:, column], torch.ones_like(lengths))
    isolated = count == 0
    if bool(isolated.any()):
        logger.warning(f"{int(isolated.sum())} template vertices have no incident edge")
    global_mean = lengths.mean()
    return torch.where(isolated, global_mean, total / count.clamp_min(1.0))


def tessellate_template(
    template: ArticulatedTemplate,
    betas: Optional[torch.Tensor] = None,
    degree: int = 1
) -> Tuple[GaussianSet, torch.Tensor]:
    """One blob per shaped rest vertex plus its skinning row"""
    vertices = shape_vertices(template, betas).detach()
    n = vertices.shape[0]
    dtype = vertices.dtype
    scale = 0.5 * mean_incident_edge_length(vertices, template.faces)
    quats = torch.zeros(n, 4, dtype=dtype)
    quats[:, 0] = 1.0
    payload = GaussianSet(
        opacity_logit=inverse_sigmoid(torch.full((n,), TESSELLATION_OPACITY, dtype=dtype)),
        means=vertices.clone(),
        quats=quats,
        log_scales=torch.log(scale).unsqueeze(-1).expand(n, 3).clone(),
        sh_dc=torch.zeros(n, 1, 3, dtype=dtype),
        sh_rest=torch.zeros(n, sh_coeff_count(degree) - 1, 3, dtype=dtype),
        source_tag=torch.full((n,), int(SourceTag.ARTICULATED), dtype=torch.long)
    )
    return payload, template.skinning.t().to(dtype).clone()


def articulate(
    canonical: GaussianSet,
    weights: torch.Tensor,
    template: ArticulatedTemplate,
    quats: torch.Tensor,
    world_pose: SE3Pose,
    betas: Optional[torch.Tensor] = None,
    use_lbs: bool = True
) -> GaussianSet:
    """T_h ⊗ LBS(canonical); without LBS only the root transform moves the blobs"""
    transforms = forward_kinematics(template, quats, joint_locations(template, betas))
    if use_lbs:
        posed = lbs_deform(canonical, weights, transforms)
    else:
        root = template.root
        posed = se3_transform_set(
            SE3Pose(transforms.rotation[root], transforms.translation[root]), canonical
        )
    return se3_transform_set(world_pose, posed).with_tag(SourceTag.ARTICULATED)


__all__ = [
    'pose_features',
    'shape_vertices',
    'joint_locations',
    'forward_kinematics',
    'skin_weights',
    'skin_logits',
    'lbs_deform',
    'mean_incident_edge_length',
    'tessellate_template',
    'articulate'
]
