from prometheus_client import CollectorRegistry, Counter, Histogram, Gauge
from typing import Dict, Mapping
import logging

logger = logging.getLogger(__name__)


class MetricsManager:
    """Training and rendering metrics"""

    def __init__(self):
        self.registry = CollectorRegistry()

        # Rendering
        self.renders_total = Counter(
            'splat_renders_total',
            'Total forward renders',
            registry=self.registry
        )
        self.blobs_skipped = Counter(
            'splat_blobs_skipped_total',
            'Blobs skipped for singular projected covariance',
            registry=self.registry
        )
        self.render_duration = Histogram(
            'splat_render_duration_seconds',
            'Forward render duration in seconds',
            registry=self.registry
        )

        # Training
        self.steps_total = Counter(
            'splat_train_steps_total',
            'Training steps',
            ['status'],
            registry=self.registry
        )
        self.step_duration = Histogram(
            'splat_train_step_duration_seconds',
            'Training step duration in seconds',
            registry=self.registry
        )
        self.loss_terms = Gauge(
            'splat_loss',
            'Latest loss terms',
            ['term'],
            registry=self.registry
        )
        self.blob_count = Gauge(
            'splat_blob_count',
            'Blobs per owner',
            ['owner'],
            registry=self.registry
        )
        self.densify_events = Counter(
            'splat_densify_blobs_total',
            'Blobs touched by densification',
            ['action'],
            registry=self.registry
        )

    def track_render(self, duration: float, skipped: int) -> None:
        """Track a forward render"""
        self.renders_total.inc()
        self.render_duration.observe(duration)
        if skipped:
            self.blobs_skipped.inc(skipped)

    def track_step(self, duration: float, accepted: bool) -> None:
        """Track a training step"""
        self.steps_total.labels(status='accepted' if accepted else 'rejected').inc()
        self.step_duration.observe(duration)

    def track_losses(self, terms: Mapping[str, float]) -> None:
        for term, value in terms.items():
            self.loss_terms.labels(term=term).set(value)

    def track_blob_counts(self, counts: Dict[str, int]) -> None:
        for owner, count in counts.items():
            self.blob_count.labels(owner=owner).set(count)

    def track_densify(self, cloned: int, split: int, pruned: int) -> None:
        self.densify_events.labels(action='clone').inc(cloned)
        self.densify_events.labels(action='split').inc(split)
        self.densify_events.labels(action='prune').inc(pruned)

    def value(self, name: str, labels: Dict[str, str] = None) -> float:
        """Read a sample value, 0 when absent"""
        sample = self.registry.get_sample_value(name, labels or {})
        return sample or 0.0


# Create metrics manager instance
metrics_manager = MetricsManager()

__all__ = ['MetricsManager', 'metrics_manager']
