import logging

from splat_graph.cli.handlers.synth import register_synth_handlers
from splat_graph.cli.handlers.pose_prep import register_pose_prep_handlers
from splat_graph.cli.handlers.train import register_train_handlers
from splat_graph.cli.handlers.render import register_render_handlers
from splat_graph.cli.handlers.evaluate import register_eval_handlers
from splat_graph.cli.handlers.edit import register_edit_handlers
from splat_graph.cli.handlers.export import register_export_handlers

logger = logging.getLogger(__name__)


def setup_handlers(subparsers) -> None:
    """Register every subcommand"""
    handlers = [
        ("synth", register_synth_handlers),
        ("pose-prep", register_pose_prep_handlers),
        ("train", register_train_handlers),
        ("render", register_render_handlers),
        ("eval", register_eval_handlers),
        ("edit", register_edit_handlers),
        ("export", register_export_handlers)
    ]

    for name, register_func in handlers:
        register_func(subparsers)
        logger.debug(f"Registered {name} command")


__all__ = ['setup_handlers']
