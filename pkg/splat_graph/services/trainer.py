from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple
import logging
import time

from cachetools import LRUCache
import numpy as np
import torch

from splat_graph.core.config import ExperimentConfig, save_experiment_config
from splat_graph.core.constants import CHECKPOINT_SUFFIX
from splat_graph.core.errors import TrainingDivergedError
from splat_graph.core.monitoring import metrics_manager
from splat_graph.models.dataset import SceneDataset
from splat_graph.models.scene import SceneGraph
from splat_graph.services.densification import DensityController
from splat_graph.services.initialization import InitReport, init_scene
from splat_graph.services.losses import FrameTarget, LossReport, compute_losses
from splat_graph.services.metrics import EvaluationReport, MetricsTable, evaluate_scene, nvs_split
from splat_graph.services.optimizer import SceneOptimizer, blob_owners, owner_payload
from splat_graph.services.rasterizer import render
from splat_graph.services.scene_graph import assemble
from splat_graph.services.storage import Checkpoint, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

TARGET_CACHE_SIZE = 256
RESOLVED_CONFIG = 'resolved_config.json'
METRICS_FILE = 'metrics.tsv'


@dataclass
class TrainResult:
    scene: SceneGraph
    iterations: int
    checkpoint: Optional[Path] = None
    last_report: Optional[LossReport] = None
    evaluations: List[EvaluationReport] = field(default_factory=list)
    init_report: Optional[InitReport] = None


def depth_target(dataset: SceneDataset, camera_id: int, frame: int, dtype: torch.dtype) -> Optional[torch.Tensor]:
    """Sparse camera-z map from lidar ranges, 0 where there is no return"""
    samples = dataset.depth.get((camera_id, frame))
    if samples is None or samples.count == 0:
        return None
    camera = dataset.camera(camera_id, frame)
    uv = samples.uv.astype(np.float64)
    rays = np.stack([(uv[:, 0] - camera.cx) / camera.fx, (uv[:, 1] - camera.cy) / camera.fy,
                     np.ones(uv.shape[0])], axis=-1)
    z = samples.ranges.astype(np.float64) / np.linalg.norm(rays, axis=-1)
    px = np.clip(np.rint(uv[:, 0]).astype(int), 0, camera.width - 1)
    py = np.clip(np.rint(uv[:, 1]).astype(int), 0, camera.height - 1)
    depth = np.zeros((camera.height, camera.width))
    depth[py, px] = z
    return torch.as_tensor(depth, dtype=dtype)


class Trainer:
    """Joint optimisation of every scene parameter group from one camera-frame per step"""

    def __init__(
        self,
        dataset: SceneDataset,
        config: ExperimentConfig,
        out_dir: Optional[Path] = None,
        scene: Optional[SceneGraph] = None,
        dtype: Optional[torch.dtype] = None
    ):
        self.dataset = dataset
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.dtype = dtype or (scene.dtype if scene is not None else torch.get_default_dtype())
        self.init_report: Optional[InitReport] = None
        if scene is None:
            scene, self.init_report = init_scene(dataset, config, self.dtype)
        scene.use_lbs = config.trainer.use_lbs
        scene.use_deformation = config.trainer.use_deformation
        self.scene = scene

        self.optimizer = SceneOptimizer(scene, config)
        self.density = DensityController(self.optimizer, config)
        self.rng = np.random.default_rng(config.trainer.seed)
        self.iteration = 0
        self.rejected = 0
        self._targets: LRUCache = LRUCache(maxsize=TARGET_CACHE_SIZE)

        if config.trainer.holdout_test_frames:
            self.train_frames, self.test_frames = nvs_split(dataset.frame_count)
        else:
            self.train_frames, self.test_frames = list(range(dataset.frame_count)), []
        self.camera_ids = dataset.camera_ids
        self.metrics_table = MetricsTable(self.out_dir / METRICS_FILE) if self.out_dir is not None else None

    # Schedule and targets

    def view(self, iteration: int) -> Tuple[int, int]:
        """Round robin over cameras, then over training frames"""
        C = len(self.camera_ids)
        frame = self.train_frames[(iteration // C) % len(self.train_frames)]
        return self.camera_ids[iteration % C], frame

    def target(self, camera_id: int, frame: int) -> FrameTarget:
        key = (camera_id, frame)
        cached = self._targets.get(key)
        if cached is not None:
            return cached
        sky = self.dataset.sky_masks.get(key)
        target = FrameTarget(
            image=torch.as_tensor(self.dataset.image(camera_id, frame), dtype=self.dtype),
            depth=depth_target(self.dataset, camera_id, frame, self.dtype),
            sky_mask=torch.as_tensor(sky) if sky is not None else None
        )
        self._targets[key] = target
        return target

    # Steps

    def _reject(self, iteration: int, reason: str) -> None:
        self.optimizer.zero_grad()
        self.rejected += 1
        logger.warning(
            f"Rejected step {iteration}: {reason} ({self.rejected} in a row)",
            extra={'iteration': iteration}
        )
        if self.rejected >= self.config.trainer.max_rejected_steps:
            raise TrainingDivergedError(iteration, self.rejected)

    def train_step(self, iteration: int) -> LossReport:
        """Render one camera-frame, backpropagate and update every group at its scheduled rate"""
        started = time.perf_counter()
        camera_id, frame = self.view(iteration)
        camera = self.dataset.camera(camera_id, frame).to(self.dtype)
        self.optimizer.update_learning_rate(iteration)
        self.optimizer.zero_grad()

        assembly = assemble(self.scene, frame)
        output = render(camera, assembly.gaussians, self.scene.sky)
        report = compute_losses(
            output, self.target(camera_id, frame), self.scene, frame, self.config.trainer,
            rng=self.rng, world=assembly.gaussians
        )
        if not report.finite:
            metrics_manager.track_step(time.perf_counter() - started, accepted=False)
            self._reject(iteration, "non-finite loss")
            return report

        report.total.backward()
        grads_finite = all(
            p.grad is None or bool(torch.isfinite(p.grad).all())
            for group in self.optimizer.optimizer.param_groups for p in group['params']
        )
        if not grads_finite:
            metrics_manager.track_step(time.perf_counter() - started, accepted=False)
            self._reject(iteration, "non-finite gradient")
            return report

        self.optimizer.step()
        self.density.add_stats(assembly, output)
        self.rejected = 0
        metrics_manager.track_step(time.perf_counter() - started, accepted=True)
        metrics_manager.track_losses(report.as_dict())
        return report

    def after_step(self, completed: int) -> None:
        """Densification and opacity reset on their schedules"""
        if completed >= self.config.trainer.iterations:
            return
        if self.density.is_densify_step(completed):
            self.density.densify_and_prune(completed)
            metrics_manager.track_blob_counts(
                {owner: owner_payload(self.scene, owner).count for owner in blob_owners(self.scene)}
            )
        if self.density.is_opacity_reset_step(completed):
            self.density.reset_opacity(completed)

    # Evaluation and persistence

    def evaluate(self, step: int) -> List[EvaluationReport]:
        reports = []
        splits = [('train', self.train_frames), ('test', self.test_frames)]
        for split, frames in splits:
            if not frames:
                continue
            report = evaluate_scene(self.scene, self.dataset, frames, split)
            reports.append(report)
            if self.metrics_table is not None:
                self.metrics_table.append(step, split, report.row())
            logger.info(
                f"Step {step} {split}: PSNR {report.full_psnr:.2f} dB, SSIM {report.full_ssim:.4f}",
                extra={'iteration': step}
            )
        return reports

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            scene=self.scene,
            iteration=self.iteration,
            optimizer_state=self.optimizer.state_dict(),
            config=self.config.to_dict(),
            rng_state={'numpy': self.rng.bit_generator.state, 'torch': torch.get_rng_state()},
            extra={
                'rejected': self.rejected,
                'grad_accum': {k: v.clone() for k, v in self.density.grad_accum.items()},
                'denom': {k: v.clone() for k, v in self.density.denom.items()}
            }
        )

    def save(self, name: Optional[str] = None) -> Optional[Path]:
        if self.out_dir is None:
            return None
        stem = name if name is not None else str(self.iteration)
        return save_checkpoint(self.checkpoint(), self.out_dir / 'checkpoints' / f"{stem}{CHECKPOINT_SUFFIX}")

    @classmethod
    def resume(
        cls,
        path: Path,
        dataset: SceneDataset,
        config: Optional[ExperimentConfig] = None,
        out_dir: Optional[Path] = None
    ) -> "Trainer":
        """Rebuild a trainer from a checkpoint, optimizer moments and RNG streams included"""
        state = load_checkpoint(path)
        config = config or ExperimentConfig.model_validate(state.config or {})
        trainer = cls(dataset, config, out_dir=out_dir, scene=state.scene)
        if state.optimizer_state is not None:
            trainer.optimizer.load_state_dict(state.optimizer_state)
        trainer.iteration = state.iteration
        rng_state = state.rng_state or {}
        if 'numpy' in rng_state:
            trainer.rng.bit_generator.state = rng_state['numpy']
        if 'torch' in rng_state:
            torch.set_rng_state(rng_state['torch'])
        trainer.rejected = int(state.extra.get('rejected', 0))
        trainer.density.grad_accum = dict(state.extra.get('grad_accum', {}))
        trainer.density.denom = dict(state.extra.get('denom', {}))
        logger.info(f"Resumed training at iteration {trainer.iteration} from {path}",
                    extra={'iteration': trainer.iteration})
        return trainer

    def train(self) -> TrainResult:
        """Step loop with densification, periodic evaluation and checkpoints"""
        trainer_config = self.config.trainer
        total = trainer_config.iterations
        if self.out_dir is not None:
            save_experiment_config(self.config, self.out_dir / RESOLVED_CONFIG)
        logger.info(
            f"Training {self.scene.scene_id} for {total} iterations on {len(self.train_frames)} frames "
            f"x {len(self.camera_ids)} cameras",
            extra={'scene_id': self.scene.scene_id, 'iteration': self.iteration}
        )

        result = TrainResult(scene=self.scene, iterations=self.iteration, init_report=self.init_report)
        last_eval = None
        try:
            while self.iteration < total:
                result.last_report = self.train_step(self.iteration)
                self.iteration += 1
                self.after_step(self.iteration)
                if self.iteration % trainer_config.eval_interval == 0:
                    result.evaluations.extend(self.evaluate(self.iteration))
                    last_eval = self.iteration
                if self.iteration % trainer_config.checkpoint_interval == 0 and self.iteration < total:
                    self.save()
        except KeyboardInterrupt:
            path = self.save('interrupted')
            logger.warning(f"Training interrupted at iteration {self.iteration}, checkpoint {path}",
                           extra={'iteration': self.iteration})
            raise

        if last_eval != self.iteration:
            result.evaluations.extend(self.evaluate(self.iteration))
        result.checkpoint = self.save()
        result.scene = self.scene
        result.iterations = self.iteration
        return result


def train(
    dataset: SceneDataset,
    config: ExperimentConfig,
    out_dir: Optional[Path] = None,
    scene: Optional[SceneGraph] = None,
    dtype: Optional[torch.dtype] = None
) -> TrainResult:
    return Trainer(dataset, config, out_dir=out_dir, scene=scene, dtype=dtype).train()


__all__ = ['Trainer', 'TrainResult', 'depth_target', 'train', 'RESOLVED_CONFIG', 'METRICS_FILE']
