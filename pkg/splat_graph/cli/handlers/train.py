from argparse import Namespace
from pathlib import Path
import logging

from splat_graph.cli.handlers.common import add_config_arguments, add_dataset_argument, require_dir, resolve_config
from splat_graph.core.errors import EXIT_OK
from splat_graph.services.storage import load_dataset
from splat_graph.services.trainer import Trainer

logger = logging.getLogger(__name__)


def cmd_train(args: Namespace) -> int:
    """Initialize (or resume) and optimize a scene, writing checkpoints and the metrics table"""
    config = resolve_config(args)
    dataset = load_dataset(require_dir(args.dataset))
    out = Path(args.out)
    if args.resume is not None:
        trainer = Trainer.resume(args.resume, dataset, config, out_dir=out)
    else:
        trainer = Trainer(dataset, config, out_dir=out)
    result = trainer.train()

    print(f"iterations  {result.iterations}")
    print(f"checkpoint  {result.checkpoint}")
    for report in result.evaluations[-2:]:
        print(f"{report.split:<11} PSNR {report.full_psnr:.2f} dB  SSIM {report.full_ssim:.4f}")
    return EXIT_OK


def register_train_handlers(subparsers) -> None:
    parser = subparsers.add_parser('train', help="Optimize a scene graph on a dataset")
    add_dataset_argument(parser)
    add_config_arguments(parser)
    parser.add_argument('--out', type=Path, required=True, help="Run directory")
    parser.add_argument('--resume', type=Path, help="Checkpoint to continue from")
    parser.set_defaults(handler=cmd_train)


__all__ = ['cmd_train', 'register_train_handlers']
