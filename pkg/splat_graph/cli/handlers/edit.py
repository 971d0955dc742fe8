from argparse import Namespace
from pathlib import Path
import logging

from splat_graph.core.errors import EXIT_OK
from splat_graph.services.editing import apply_edit_script, load_edit_script
from splat_graph.services.storage import Checkpoint, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)


def cmd_edit(args: Namespace) -> int:
    """Apply an edit script to a checkpoint; nothing is written unless every edit succeeds"""
    edits = load_edit_script(args.script)
    source = load_checkpoint(args.checkpoint)
    edited = apply_edit_script(source.scene, edits, base_dir=Path(args.script).parent)

    # optimizer moments no longer match the edited parameter set
    save_checkpoint(Checkpoint(scene=edited, iteration=source.iteration, config=source.config,
                               extra={'edited_from': str(args.checkpoint), 'edits': len(edits)}),
                    args.out)
    print(f"edits   {len(edits)}")
    print(f"nodes   {', '.join(edited.node_ids()) or '-'}")
    print(f"out     {args.out}")
    return EXIT_OK


def register_edit_handlers(subparsers) -> None:
    parser = subparsers.add_parser('edit', help="Apply a JSON edit script to a checkpoint")
    parser.add_argument('--checkpoint', type=Path, required=True)
    parser.add_argument('--script', type=Path, required=True, help="JSON list of swap/insert/remove/retime records")
    parser.add_argument('--out', type=Path, required=True, help="Edited checkpoint to write")
    parser.set_defaults(handler=cmd_edit)


__all__ = ['cmd_edit', 'register_edit_handlers']
