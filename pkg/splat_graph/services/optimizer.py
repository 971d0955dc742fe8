from typing import Dict, Iterator, List, Optional, Tuple
import logging

import torch

from splat_graph.core.config import ExperimentConfig, Schedule
from splat_graph.core.constants import NodeKind
from splat_graph.core.errors import ValidationError
from splat_graph.models.gaussians import GaussianSet
from splat_graph.models.geometry import quat_normalize
from splat_graph.models.scene import SceneGraph, SceneNode
from splat_graph.services.scene_graph import BACKGROUND_OWNER

logger = logging.getLogger(__name__)

BLOB_COLUMNS = ('opacity_logit', 'means', 'quats', 'log_scales', 'sh_dc', 'sh_rest')
SKY_GROUP = 'sky'
NET_GROUP = 'deformation_net'
ADAM_EPS = 1e-15


def group_name(owner: str, column: str) -> str:
    return f"{owner}/{column}"


def split_name(name: str) -> Tuple[str, str]:
    owner, _, column = name.rpartition('/')
    return owner, column


def _leaf(x: torch.Tensor) -> torch.Tensor:
    return x.detach().requires_grad_(True)


def owner_payload(scene: SceneGraph, owner: str) -> GaussianSet:
    if owner == BACKGROUND_OWNER:
        return scene.background
    return scene.node(owner).payload


def set_owner_payload(scene: SceneGraph, owner: str, payload: GaussianSet) -> None:
    if owner == BACKGROUND_OWNER:
        scene.background = payload
    else:
        scene.node(owner).payload = payload


def blob_owners(scene: SceneGraph) -> List[str]:
    return [BACKGROUND_OWNER] + scene.node_ids()


class SceneOptimizer:
    """Adam over named parameter groups of a scene graph, one group per tensor"""

    def __init__(self, scene: SceneGraph, config: ExperimentConfig):
        self.scene = scene
        self.config = config
        self.schedules: Dict[str, Tuple[Schedule, float, bool]] = {}
        groups = list(self._make_groups())
        self.optimizer = torch.optim.Adam(
            [{'params': params, 'name': name, 'lr': 0.0} for name, params in groups],
            lr=0.0, eps=ADAM_EPS
        )
        self.update_learning_rate(0)
        logger.info(f"Optimizer built with {len(groups)} parameter groups")

    # Group construction

    def _register(self, name: str, schedule: Schedule, scale: float = 1.0, quaternion: bool = False) -> None:
        self.schedules[name] = (schedule, scale, quaternion)

    def _blob_groups(self, owner: str, kind: Optional[NodeKind]) -> Iterator[Tuple[str, List[torch.Tensor]]]:
        lr = self.config.lr
        payload = owner_payload(self.scene, owner)
        leaves = {column: _leaf(getattr(payload, column)) for column in BLOB_COLUMNS}
        set_owner_payload(self.scene, owner, payload.replace(**leaves))
        rotation = lr.rotation_articulated if kind == NodeKind.ARTICULATED else lr.rotation_default
        schedules = {
            'opacity_logit': (lr.opacity, 1.0, False),
            'means': (lr.means, self.scene.scene_extent, False),
            'quats': (rotation, 1.0, True),
            'log_scales': (lr.scales, 1.0, False),
            'sh_dc': (lr.sh_dc, 1.0, False),
            'sh_rest': (lr.sh_rest, 1.0, False),
        }
        for column in BLOB_COLUMNS:
            name = group_name(owner, column)
            self._register(name, *schedules[column])
            yield name, [leaves[column]]

    def _node_groups(self, node: SceneNode) -> Iterator[Tuple[str, List[torch.Tensor]]]:
        lr = self.config.lr
        trainer = self.config.trainer
        if trainer.optimize_box_poses:
            node.pose.residual_rotation = _leaf(node.pose.residual_rotation)
            node.pose.residual_translation = _leaf(node.pose.residual_translation)
            self._register(group_name(node.node_id, 'pose_rotation'), lr.box_rotation)
            yield group_name(node.node_id, 'pose_rotation'), [node.pose.residual_rotation]
            self._register(group_name(node.node_id, 'pose_translation'), lr.box_translation)
            yield group_name(node.node_id, 'pose_translation'), [node.pose.residual_translation]
        if node.kind == NodeKind.ARTICULATED and trainer.optimize_body_poses:
            node.body_pose = node.body_pose.replace(quats=_leaf(node.body_pose.quats))
            self._register(group_name(node.node_id, 'body_pose'), lr.body_pose, quaternion=True)
            yield group_name(node.node_id, 'body_pose'), [node.body_pose.quats]
            node.skin_logits = _leaf(node.skin_logits)
            self._register(group_name(node.node_id, 'skin_logits'), lr.skinning)
            yield group_name(node.node_id, 'skin_logits'), [node.skin_logits]
        if node.kind == NodeKind.DEFORMABLE and self.scene.use_deformation:
            node.embedding = _leaf(node.embedding)
            self._register(group_name(node.node_id, 'embedding'), lr.embedding)
            yield group_name(node.node_id, 'embedding'), [node.embedding]
            if node.deformation_net is not None:
                self._register(group_name(node.node_id, NET_GROUP), lr.deformation_net)
                yield group_name(node.node_id, NET_GROUP), self._net_params(node.deformation_net)

    def _make_groups(self) -> Iterator[Tuple[str, List[torch.Tensor]]]:
        yield from self._blob_groups(BACKGROUND_OWNER, None)
        for node in self.scene.nodes:
            yield from self._blob_groups(node.node_id, node.kind)
            yield from self._node_groups(node)
        if self.scene.sky is not None:
            self.scene.sky.texels = _leaf(self.scene.sky.texels)
            self._register(SKY_GROUP, self.config.lr.sky)
            yield SKY_GROUP, [self.scene.sky.texels]
        net = self.scene.deformation_net
        if net is not None and self.scene.use_deformation:
            self._register(NET_GROUP, self.config.lr.deformation_net)
            yield NET_GROUP, self._net_params(net)

    def _net_params(self, net: torch.nn.Module) -> List[torch.Tensor]:
        params = list(net.parameters())
        for p in params:
            p.requires_grad_(True)
        return params

    # Schedule and step

    def group(self, name: str) -> dict:
        for group in self.optimizer.param_groups:
            if group['name'] == name:
                return group
        raise ValidationError(f"No parameter group named '{name}'", field='optimizer')

    def group_names(self) -> List[str]:
        return [g['name'] for g in self.optimizer.param_groups]

    def update_learning_rate(self, iteration: int) -> Dict[str, float]:
        total = self.config.trainer.iterations
        rates = {}
        for group in self.optimizer.param_groups:
            schedule, scale, _ = self.schedules[group['name']]
            group['lr'] = schedule.at(iteration, total) * scale
            rates[group['name']] = group['lr']
        return rates

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=True)

    def step(self) -> None:
        for group in self.optimizer.param_groups:
            if group['lr'] == 0.0:
                for p in group['params']:
                    p.grad = None
        self.optimizer.step()
        with torch.no_grad():
            for group in self.optimizer.param_groups:
                if group['lr'] > 0.0 and self.schedules[group['name']][2]:
                    for p in group['params']:
                        p.copy_(quat_normalize(p))

    def state_dict(self) -> dict:
        return self.optimizer.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.optimizer.load_state_dict(state)

    # Per-row edits of blob groups

    def _owner_groups(self, owner: str) -> List[dict]:
        names = {group_name(owner, c) for c in BLOB_COLUMNS + ('skin_logits',)}
        return [g for g in self.optimizer.param_groups if g['name'] in names]

    def _swap_param(self, group: dict, tensor: torch.Tensor, transform_state) -> torch.Tensor:
        old = group['params'][0]
        stored = self.optimizer.state.get(old, None)
        new = _leaf(tensor)
        if stored:
            stored['exp_avg'] = transform_state(stored['exp_avg'])
            stored['exp_avg_sq'] = transform_state(stored['exp_avg_sq'])
            del self.optimizer.state[old]
            self.optimizer.state[new] = stored
        group['params'][0] = new
        return new

    def _write_back(self, owner: str, tensors: Dict[str, torch.Tensor], source_tag: torch.Tensor,
                    anchors_index: Optional[torch.Tensor]) -> None:
        payload = owner_payload(self.scene, owner)
        columns = {c: tensors.get(c, getattr(payload, c)) for c in BLOB_COLUMNS}
        set_owner_payload(self.scene, owner, GaussianSet(**columns, source_tag=source_tag))
        if owner == BACKGROUND_OWNER:
            return
        node = self.scene.node(owner)
        if 'skin_logits' in tensors:
            node.skin_logits = tensors['skin_logits']
        elif node.skin_logits is not None and anchors_index is not None:
            node.skin_logits = node.skin_logits.detach()[anchors_index]
        if node.anchors is not None and anchors_index is not None:
            node.anchors = node.anchors[anchors_index]

    def prune(self, owner: str, keep: torch.Tensor) -> None:
        """Keep rows where `keep` is True, optimizer moments included"""
        tensors = {}
        for group in self._owner_groups(owner):
            _, column = split_name(group['name'])
            param = group['params'][0]
            tensors[column] = self._swap_param(group, param.detach()[keep], lambda s: s[keep])
        payload = owner_payload(self.scene, owner)
        index = torch.nonzero(keep).squeeze(-1)
        self._write_back(owner, tensors, payload.source_tag[keep], index)

    def extend(self, owner: str, parents: torch.Tensor, rows: Dict[str, torch.Tensor]) -> None:
        """Append child rows; columns not given are copied from their parents, moments start at zero"""
        tensors = {}
        for group in self._owner_groups(owner):
            _, column = split_name(group['name'])
            param = group['params'][0].detach()
            addition = rows.get(column, param[parents])
            tensors[column] = self._swap_param(
                group, torch.cat([param, addition.to(param.dtype)], dim=0),
                lambda s, a=addition: torch.cat([s, torch.zeros_like(a)], dim=0)
            )
        payload = owner_payload(self.scene, owner)
        n = payload.count
        index = torch.cat([torch.arange(n), parents])
        self._write_back(owner, tensors, payload.source_tag[index], index)

    def replace_column(self, owner: str, column: str, tensor: torch.Tensor) -> None:
        """Swap one column's values and reset its moments"""
        group = self.group(group_name(owner, column))
        new = self._swap_param(group, tensor, torch.zeros_like)
        payload = owner_payload(self.scene, owner)
        set_owner_payload(self.scene, owner, payload.replace(**{column: new}))


__all__ = [
    'SceneOptimizer',
    'BLOB_COLUMNS',
    'SKY_GROUP',
    'NET_GROUP',
    'group_name',
    'split_name',
    'owner_payload',
    'set_owner_payload',
    'blob_owners'
]
