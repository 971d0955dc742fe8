from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import copy
import logging
import math

import torch

from splat_graph.core.constants import NodeKind, SourceTag
from splat_graph.core.errors import EditError, PoseError
from splat_graph.models.gaussians import GaussianSet, se3_transform_set
from splat_graph.models.geometry import SE3Pose
from splat_graph.models.human import BodyPoseSequence
from splat_graph.models.scene import EnvironmentMap, SceneGraph, SceneNode, TrackedPose
from splat_graph.services.deformation import apply_deltas, deform_query, normalize_anchors
from splat_graph.services.skinning import articulate, skin_weights

logger = logging.getLogger(__name__)

BACKGROUND_OWNER = 'background'


def pose_at(tracked: TrackedPose, t: float, node_id: Optional[str] = None) -> SE3Pose:
    """Corrected pose at a possibly fractional frame; nearest valid pose held outside the range"""
    frames = tracked.valid_frames()
    if not frames:
        raise PoseError("Tracked pose has no valid frame", node_id)
    lo = math.floor(t)
    if lo == t and 0 <= lo < tracked.frame_count and bool(tracked.valid[lo]):
        return tracked.corrected(lo)
    before = [f for f in frames if f <= t]
    after = [f for f in frames if f >= t]
    if not before:
        return tracked.corrected(after[0])
    if not after:
        return tracked.corrected(before[-1])
    a, b = before[-1], after[0]
    if a == b:
        return tracked.corrected(a)
    return tracked.corrected(a).interpolate(tracked.corrected(b), (t - a) / (b - a))


def node_present(tracked: TrackedPose, t: float) -> bool:
    """Valid at the floor or the ceiling of t"""
    T = tracked.frame_count
    lo, hi = math.floor(t), math.ceil(t)
    return any(0 <= f < T and bool(tracked.valid[f]) for f in {lo, hi})


def query_sky(sky: EnvironmentMap, directions: torch.Tensor) -> torch.Tensor:
    return sky.query(directions)


def world_gaussians_rigid(node: SceneNode, t: float) -> GaussianSet:
    return se3_transform_set(pose_at(node.pose, t, node.node_id), node.payload).with_tag(SourceTag.RIGID)


def world_gaussians_articulated(node: SceneNode, t: float, use_lbs: bool = True) -> GaussianSet:
    """T_h(t) ⊗ LBS(canonical, w, θ(t))"""
    theta = node.body_pose.at(t, node.node_id)
    return articulate(
        node.payload,
        skin_weights(node.skin_logits),
        node.template,
        theta.to(node.payload.dtype),
        pose_at(node.pose, t, node.node_id),
        betas=node.betas,
        use_lbs=use_lbs
    )


def world_gaussians_deformable(
    node: SceneNode,
    t_normalized: float,
    net: Optional[torch.nn.Module],
    t: float,
    use_deformation: bool = True
) -> GaussianSet:
    """T_h(t) ⊗ (canonical ⊕ F(anchor, e_h, t))"""
    canonical = node.payload
    if use_deformation and net is not None:
        deltas = deform_query(net, normalize_anchors(node.anchors, node.anchor_box), node.embedding, t_normalized)
        canonical = apply_deltas(canonical, deltas)
    return se3_transform_set(pose_at(node.pose, t, node.node_id), canonical).with_tag(SourceTag.DEFORMABLE)


def node_world(scene: SceneGraph, node: SceneNode, t: float) -> Optional[GaussianSet]:
    """World-space blobs of one node, None when absent at t"""
    if not node_present(node.pose, t):
        return None
    if node.kind == NodeKind.RIGID:
        return world_gaussians_rigid(node, t)
    if node.kind == NodeKind.ARTICULATED:
        return world_gaussians_articulated(node, t, scene.use_lbs)
    return world_gaussians_deformable(
        node, scene.normalized_time(t), scene.net_for(node), t, scene.use_deformation
    )


@dataclass
class WorldAssembly:
    gaussians: GaussianSet
    segments: Dict[str, slice]  # owner -> rows in gaussians


KIND_ORDER = (NodeKind.RIGID, NodeKind.ARTICULATED, NodeKind.DEFORMABLE)


def assemble(scene: SceneGraph, t: float) -> WorldAssembly:
    """Background, then rigid, articulated and deformable nodes"""
    parts: List[GaussianSet] = [scene.background.with_tag(SourceTag.BACKGROUND)]
    owners: List[str] = [BACKGROUND_OWNER]
    for kind in KIND_ORDER:
        for node in scene.nodes:
            if node.kind != kind:
                continue
            world = node_world(scene, node, t)
            if world is not None:
                parts.append(world)
                owners.append(node.node_id)

    segments, start = {}, 0
    for owner, part in zip(owners, parts):
        segments[owner] = slice(start, start + part.count)
        start += part.count
    return WorldAssembly(GaussianSet.concatenate(parts), segments)


def assemble_world(scene: SceneGraph, t: float) -> GaussianSet:
    return assemble(scene, t).gaussians


def _nearest_frames(source: torch.Tensor, target: torch.Tensor) -> List[int]:
    """For each target timestamp the nearest source frame, both normalized to [0, 1]"""
    def normalize(ts: torch.Tensor) -> torch.Tensor:
        ts = ts.to(torch.float64)
        span = float(ts[-1] - ts[0]) if ts.shape[0] > 1 else 1.0
        return (ts - ts[0]) / max(span, 1e-12)
    src, dst = normalize(source), normalize(target)
    return torch.argmin((dst.unsqueeze(1) - src.unsqueeze(0)).abs(), dim=1).tolist()


def _retime_body_pose(body_pose: BodyPoseSequence, frames: Sequence[int]) -> BodyPoseSequence:
    index = torch.as_tensor(list(frames), dtype=torch.long)
    return BodyPoseSequence(
        quats=body_pose.quats.detach()[index].clone(),
        valid=body_pose.valid[index].clone(),
        provenance=body_pose.provenance[index].clone()
    )


def _donor_net(donor: SceneNode, donor_scene: SceneGraph) -> torch.nn.Module:
    """Private copy of the net the donor was decoded with"""
    net = donor_scene.net_for(donor)
    if net is None:
        raise EditError(
            f"Deformable donor {donor.node_id} in {donor_scene.scene_id} has no deformation network",
            op='swap', node_id=donor.node_id
        )
    return copy.deepcopy(net)


def swap_asset(scene: SceneGraph, node_id: str, donor_scene: SceneGraph, donor_node_id: str) -> SceneGraph:
    """Replace a node's payload with a donor's; the target trajectory stays"""
    target = scene.node(node_id)
    donor = donor_scene.node(donor_node_id).clone()
    if donor.kind != target.kind:
        raise EditError(
            f"Cannot swap {donor.kind.value} node {donor_node_id} into {target.kind.value} slot {node_id}",
            op='swap', node_id=node_id
        )
    if donor_scene.frame_count == 0:
        raise EditError(f"Donor scene {donor_scene.scene_id} has an empty timeline", op='swap', node_id=node_id)

    frames = _nearest_frames(donor_scene.timestamps, scene.timestamps)
    swapped = SceneNode(
        node_id=target.node_id,
        label=donor.label,
        kind=target.kind,
        payload=donor.payload,
        pose=target.pose.clone(),
        template=donor.template,
        betas=donor.betas,
        skin_logits=donor.skin_logits,
        body_pose=_retime_body_pose(donor.body_pose, frames) if donor.body_pose is not None else None,
        embedding=donor.embedding,
        anchors=donor.anchors,
        anchor_box=donor.anchor_box,
        deformation_net=_donor_net(donor, donor_scene) if donor.kind == NodeKind.DEFORMABLE else None
    )
    result = scene.clone()
    result.nodes = [swapped if n.node_id == node_id else n for n in result.nodes]
    logger.info(f"Swapped node {node_id} with {donor_scene.scene_id}/{donor_node_id}")
    return result


def insert_node(scene: SceneGraph, node: SceneNode) -> SceneGraph:
    if scene.has_node(node.node_id):
        raise EditError(f"Node id '{node.node_id}' already exists", op='insert', node_id=node.node_id)
    if node.frame_count != scene.frame_count:
        raise EditError(
            f"Trajectory of {node.node_id} has {node.frame_count} frames, timeline has {scene.frame_count}; "
            f"resample it first",
            op='insert', node_id=node.node_id
        )
    if node.body_pose is not None and node.body_pose.frame_count != scene.frame_count:
        raise EditError(f"Body pose of {node.node_id} does not span the timeline", op='insert', node_id=node.node_id)
    result = scene.clone()
    result.nodes = result.nodes + [node.clone()]
    logger.info(f"Inserted {node.kind.value} node {node.node_id} ({node.payload.count} blobs)")
    return result


def place_asset(
    scene: SceneGraph,
    asset: SceneNode,
    node_id: str,
    trajectory_from: str,
    offset: Optional[Sequence[float]] = None,
    deformation_net: Optional[torch.nn.Module] = None
) -> SceneGraph:
    """Insert an exported payload along an existing node's trajectory, optionally shifted in world"""
    guide = scene.node(trajectory_from)
    pose = guide.pose.bake()
    if offset is not None:
        shift = torch.as_tensor(list(offset), dtype=pose.dtype)
        if shift.shape != (3,):
            raise EditError(f"Offset must have 3 components, got {len(offset)}", op='insert', node_id=node_id)
        pose.base_translation = pose.base_translation + shift

    node = asset.clone()
    node.node_id = node_id
    node.pose = pose
    if node.kind == NodeKind.ARTICULATED:
        if guide.kind == NodeKind.ARTICULATED and guide.body_pose is not None:
            node.body_pose = guide.body_pose.clone()
        elif node.body_pose.frame_count != scene.frame_count:
            source = torch.arange(node.body_pose.frame_count, dtype=torch.float64)
            target = torch.arange(scene.frame_count, dtype=torch.float64)
            node.body_pose = _retime_body_pose(node.body_pose, _nearest_frames(source, target))

    adopt_net = False
    if node.kind == NodeKind.DEFORMABLE and node.deformation_net is None:
        if deformation_net is None:
            raise EditError(f"Deformable asset {node_id} comes without a deformation network",
                            op='insert', node_id=node_id)
        if scene.deformation_net is None:
            adopt_net = True
        else:
            node.deformation_net = deformation_net

    result = insert_node(scene, node)
    if adopt_net:
        result.deformation_net = copy.deepcopy(deformation_net)
    return result


def remove_node(scene: SceneGraph, node_id: str) -> SceneGraph:
    """Drop a node; the shared deformation net is kept"""
    scene.node(node_id)
    result = scene.clone()
    result.nodes = [n for n in result.nodes if n.node_id != node_id]
    logger.info(f"Removed node {node_id}")
    return result


def retime_trajectory(scene: SceneGraph, node_id: str, source_frames: Sequence[int]) -> SceneGraph:
    """New frame i takes the pose (and body pose) of old frame source_frames[i]"""
    node = scene.node(node_id)
    if len(source_frames) != scene.frame_count:
        raise EditError(
            f"Retime map has {len(source_frames)} entries, timeline has {scene.frame_count}",
            op='retime', node_id=node_id
        )
    if any(not 0 <= f < scene.frame_count for f in source_frames):
        raise EditError("Retime map references frames outside the timeline", op='retime', node_id=node_id)

    index = torch.as_tensor(list(source_frames), dtype=torch.long)
    pose = node.pose.clone()
    retimed = TrackedPose(
        pose.base_rotation[index].clone(),
        pose.base_translation[index].clone(),
        pose.valid[index].clone(),
        pose.residual_rotation[index].clone(),
        pose.residual_translation[index].clone()
    )
    result = scene.clone()
    for n in result.nodes:
        if n.node_id == node_id:
            n.pose = retimed
            if n.body_pose is not None:
                n.body_pose = _retime_body_pose(n.body_pose, source_frames)
    return result


def reverse_trajectory(scene: SceneGraph, node_id: str) -> SceneGraph:
    return retime_trajectory(scene, node_id, list(range(scene.frame_count - 1, -1, -1)))


def node_centroid_track(scene: SceneGraph, node_id: str) -> torch.Tensor:
    """(T, 3) world centroid per frame, NaN where absent"""
    node = scene.node(node_id)
    track = []
    with torch.no_grad():
        for frame in range(scene.frame_count):
            world = node_world(scene, node, frame)
            if world is None or world.count == 0:
                track.append(torch.full((3,), float('nan'), dtype=scene.dtype))
            else:
                track.append(world.means.mean(dim=0))
    return torch.stack(track)


__all__ = [
    'BACKGROUND_OWNER',
    'WorldAssembly',
    'pose_at',
    'node_present',
    'query_sky',
    'world_gaussians_rigid',
    'world_gaussians_articulated',
    'world_gaussians_deformable',
    'node_world',
    'assemble',
    'assemble_world',
    'swap_asset',
    'insert_node',
    'place_asset',
    'remove_node',
    'retime_trajectory',
    'reverse_trajectory',
    'node_centroid_track'
]
