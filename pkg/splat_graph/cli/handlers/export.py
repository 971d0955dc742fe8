from argparse import Namespace
from pathlib import Path

from splat_graph.core.errors import EXIT_OK
from splat_graph.services.storage import export_node, load_checkpoint


def cmd_export(args: Namespace) -> int:
    scene = load_checkpoint(args.checkpoint).scene
    path = export_node(scene, args.node, args.out)
    print(f"asset   {path}")
    return EXIT_OK


def register_export_handlers(subparsers) -> None:
    parser = subparsers.add_parser('export', help="Export one node as a reusable asset")
    parser.add_argument('--checkpoint', type=Path, required=True)
    parser.add_argument('--node', required=True, help="Node id")
    parser.add_argument('--out', type=Path, required=True, help="Asset file to write")
    parser.set_defaults(handler=cmd_export)


__all__ = ['cmd_export', 'register_export_handlers']
