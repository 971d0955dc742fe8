from argparse import Namespace
from pathlib import Path
import logging

from splat_graph.cli.handlers.common import add_config_arguments, add_dataset_argument, require_dir, resolve_config
from splat_graph.core.errors import EXIT_OK, DatasetError
from splat_graph.services.pose_pipeline import PosePrepService
from splat_graph.services.storage import load_dataset, save_poses_init

logger = logging.getLogger(__name__)


def cmd_pose_prep(args: Namespace) -> int:
    """Match detections to human tracklets and write poses_init.json"""
    root = require_dir(args.dataset)
    config = resolve_config(args)
    dataset = load_dataset(root)
    if dataset.humans() and not dataset.detections:
        raise DatasetError("Dataset has human tracklets but no detections_cam*.json files", path=str(root))

    poses = PosePrepService(dataset, config.pose_prep).run()
    out = Path(args.out) if args.out is not None else root / 'poses_init.json'
    save_poses_init(poses, out)

    print("track\tcamera\tdetection\tmean_iou")
    for row in poses.matches:
        det = row['det_id'] if row['det_id'] is not None else '-'
        print(f"{row['track_id']}\t{row['camera_id']}\t{det}\t{float(row['mean_iou']):.4f}")
    if poses.demoted:
        print(f"demoted: {', '.join(poses.demoted)}")
    return EXIT_OK


def register_pose_prep_handlers(subparsers) -> None:
    parser = subparsers.add_parser('pose-prep', help="Prepare human body poses from detections")
    add_dataset_argument(parser)
    add_config_arguments(parser)
    parser.add_argument('--out', type=Path, help="Output file, defaults to <dataset>/poses_init.json")
    parser.set_defaults(handler=cmd_pose_prep)


__all__ = ['cmd_pose_prep', 'register_pose_prep_handlers']
