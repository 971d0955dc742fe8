from argparse import Namespace
from pathlib import Path
import logging

from splat_graph.cli.handlers.common import add_dataset_argument, require_dir
from splat_graph.core.errors import EXIT_OK
from splat_graph.services.metrics import evaluate_scene, nvs_split
from splat_graph.services.storage import load_checkpoint, load_dataset
from splat_graph.utils.helpers import dump_json

logger = logging.getLogger(__name__)

SPLITS = ('all', 'recon', 'nvs')


def cmd_eval(args: Namespace) -> int:
    """Reconstruction (training frames) and novel-view (held-out frames) metrics report"""
    checkpoint = load_checkpoint(args.checkpoint)
    scene = checkpoint.scene
    dataset = load_dataset(require_dir(args.dataset))
    train_frames, test_frames = nvs_split(dataset.frame_count)

    report = {
        'scene_id': scene.scene_id,
        'checkpoint': str(args.checkpoint),
        'iteration': checkpoint.iteration,
        'reconstruction': None,
        'nvs': None
    }
    if args.split in ('all', 'recon'):
        report['reconstruction'] = evaluate_scene(scene, dataset, train_frames, 'train', with_depth=True).to_dict()
    if args.split in ('all', 'nvs') and test_frames:
        report['nvs'] = evaluate_scene(scene, dataset, test_frames, 'test', with_depth=True).to_dict()

    out = Path(args.out) if args.out is not None else Path(args.checkpoint).with_suffix('.eval.json')
    dump_json(report, out)
    for section in ('reconstruction', 'nvs'):
        if report[section] is not None:
            full = report[section]['full']
            print(f"{section:<15} PSNR {full['psnr']:.2f} dB  SSIM {full['ssim']:.4f}")
    print(f"report          {out}")
    return EXIT_OK


def register_eval_handlers(subparsers) -> None:
    parser = subparsers.add_parser('eval', help="Evaluate a checkpoint against a dataset")
    parser.add_argument('--checkpoint', type=Path, required=True)
    add_dataset_argument(parser)
    parser.add_argument('--split', choices=SPLITS, default='all')
    parser.add_argument('--out', type=Path, help="Report file, defaults next to the checkpoint")
    parser.set_defaults(handler=cmd_eval)


__all__ = ['cmd_eval', 'register_eval_handlers']
