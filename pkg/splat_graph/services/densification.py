from dataclasses import dataclass
from typing import Dict, Tuple
import logging

import torch

from splat_graph.core.config import ExperimentConfig
from splat_graph.core.monitoring import metrics_manager
from splat_graph.models.gaussians import inverse_sigmoid
from splat_graph.models.geometry import apply_matrix, quat_to_matrix
from splat_graph.services.optimizer import SceneOptimizer, blob_owners, owner_payload
from splat_graph.services.rasterizer import RenderOutput
from splat_graph.services.scene_graph import WorldAssembly

logger = logging.getLogger(__name__)

SPLIT_CHILDREN = 2


@dataclass
class DensifyReport:
    cloned: int = 0
    split: int = 0
    pruned: int = 0
    skipped: bool = False
    deferred: int = 0

    def as_dict(self) -> Dict[str, int]:
        return {'cloned': self.cloned, 'split': self.split, 'pruned': self.pruned, 'skipped': int(self.skipped),
                'deferred': self.deferred}


class DensityController:
    """Absolute screen-gradient statistics and the clone/split/prune schedule"""

    def __init__(self, optimizer: SceneOptimizer, config: ExperimentConfig):
        self.optimizer = optimizer
        self.config = config
        self.grad_accum: Dict[str, torch.Tensor] = {}
        self.denom: Dict[str, torch.Tensor] = {}

    @property
    def scene(self):
        return self.optimizer.scene

    def _stats(self, owner: str):
        n = owner_payload(self.scene, owner).count
        accum = self.grad_accum.get(owner)
        if accum is None or accum.shape[0] != n:
            dtype = self.scene.dtype
            self.grad_accum[owner] = torch.zeros(n, dtype=dtype)
            self.denom[owner] = torch.zeros(n, dtype=dtype)
        return self.grad_accum[owner], self.denom[owner]

    def reset_stats(self) -> None:
        self.grad_accum.clear()
        self.denom.clear()

    def add_stats(self, assembly: WorldAssembly, render: RenderOutput) -> None:
        """Accumulate |∂L/∂μ'| norms of blobs seen in this render"""
        norms = render.abs_grad.detach().norm(dim=-1)
        visible = render.visible
        for owner, rows in assembly.segments.items():
            accum, denom = self._stats(owner)
            seen = visible[rows]
            accum[seen] += norms[rows][seen].to(accum.dtype)
            denom[seen] += 1.0

    def mean_grads(self, owner: str) -> torch.Tensor:
        accum, denom = self._stats(owner)
        return torch.where(denom > 0, accum / denom.clamp_min(1.0), torch.zeros_like(accum))

    def is_densify_step(self, iteration: int) -> bool:
        d = self.config.densify
        return iteration > 0 and d.start <= iteration < self.config.densify_stop and iteration % d.interval == 0

    def is_opacity_reset_step(self, iteration: int) -> bool:
        d = self.config.densify
        return iteration > 0 and iteration < self.config.densify_stop and iteration % d.opacity_reset_interval == 0

    def blob_count(self) -> int:
        return sum(owner_payload(self.scene, owner).count for owner in blob_owners(self.scene))

    def _clone(self, owner: str, mask: torch.Tensor) -> int:
        parents = torch.nonzero(mask).squeeze(-1)
        if parents.numel():
            self.optimizer.extend(owner, parents, {})
        return int(parents.numel())

    def _split(self, owner: str, mask: torch.Tensor, generator: torch.Generator) -> int:
        parents = torch.nonzero(mask).squeeze(-1)
        if not parents.numel():
            return 0
        payload = owner_payload(self.scene, owner).detach()
        n = payload.count
        index = parents.repeat(SPLIT_CHILDREN)
        scales = payload.scales[index]
        samples = torch.randn(scales.shape, generator=generator, dtype=torch.float64).to(scales.dtype) * scales
        means = payload.means[index] + apply_matrix(quat_to_matrix(payload.quats[index]), samples)
        log_scales = torch.log(scales / self.config.densify.split_factor)
        self.optimizer.extend(owner, index, {'means': means, 'log_scales': log_scales})

        keep = torch.ones(n + index.numel(), dtype=torch.bool)
        keep[parents] = False
        self.optimizer.prune(owner, keep)
        return int(parents.numel())

    def _growth_masks(
        self, extent_gate: float, headroom: int
    ) -> Tuple[Dict[str, Tuple[torch.Tensor, torch.Tensor]], int]:
        """Per-owner (selected, large) masks; at most `headroom` rows selected, highest gradients first"""
        d = self.config.densify
        owners = blob_owners(self.scene)
        grads, selected, large = [], [], []
        for owner in owners:
            g = self.mean_grads(owner)
            grads.append(g)
            selected.append(g > d.grad_threshold)
            large.append(owner_payload(self.scene, owner).scales.detach().max(dim=-1).values > extent_gate)

        flat = torch.cat(selected)
        rows = torch.nonzero(flat).squeeze(-1)
        deferred = max(int(rows.numel()) - headroom, 0)
        if deferred:
            order = torch.argsort(torch.cat(grads)[rows], descending=True, stable=True)
            flat[rows[order[headroom:]]] = False
            selected = list(torch.split(flat, [g.shape[0] for g in grads]))
        return {owner: (s, l) for owner, s, l in zip(owners, selected, large)}, deferred

    def densify_and_prune(self, iteration: int) -> DensifyReport:
        d = self.config.densify
        report = DensifyReport()
        extent_gate = d.scale_threshold * self.scene.scene_extent
        ceiling = self.config.blob_ceiling

        # each clone or split adds exactly one blob
        headroom = int(ceiling - self.blob_count())
        masks: Dict[str, Tuple[torch.Tensor, torch.Tensor]] = {}
        if headroom <= 0:
            report.skipped = True
            logger.warning(
                f"Blob count {self.blob_count()} at ceiling {ceiling}, skipping densification",
                extra={'iteration': iteration}
            )
        else:
            masks, report.deferred = self._growth_masks(extent_gate, headroom)
            if report.deferred:
                logger.warning(
                    f"Densification capped at {headroom} new blobs below ceiling {ceiling}, "
                    f"{report.deferred} candidates deferred",
                    extra={'iteration': iteration}
                )

        generator = torch.Generator().manual_seed(self.config.trainer.seed * 1_000_003 + iteration)
        for owner in blob_owners(self.scene):
            if owner in masks:
                selected, large = masks[owner]
                split_mask = selected & large
                report.cloned += self._clone(owner, selected & ~large)
                # clones were appended, parents keep their rows
                padded = torch.zeros(owner_payload(self.scene, owner).count, dtype=torch.bool)
                padded[:split_mask.shape[0]] = split_mask
                report.split += self._split(owner, padded, generator)

            opacity = torch.sigmoid(owner_payload(self.scene, owner).opacity_logit.detach())
            low = opacity < d.prune_opacity
            if bool(low.any()):
                self.optimizer.prune(owner, ~low)
                report.pruned += int(low.sum())

        self.reset_stats()
        metrics_manager.track_densify(report.cloned, report.split, report.pruned)
        logger.info(
            f"Densification: cloned {report.cloned}, split {report.split}, pruned {report.pruned}, "
            f"total {self.blob_count()}",
            extra={'iteration': iteration}
        )
        return report

    def reset_opacity(self, iteration: int) -> None:
        ceiling = inverse_sigmoid(torch.tensor(self.config.densify.opacity_reset_value, dtype=torch.float64))
        for owner in blob_owners(self.scene):
            logits = owner_payload(self.scene, owner).opacity_logit.detach()
            self.optimizer.replace_column(owner, 'opacity_logit', torch.minimum(logits, ceiling.to(logits.dtype)))
        logger.info(f"Opacity reset to at most {self.config.densify.opacity_reset_value}",
                    extra={'iteration': iteration})


__all__ = ['DensityController', 'DensifyReport', 'SPLIT_CHILDREN']
