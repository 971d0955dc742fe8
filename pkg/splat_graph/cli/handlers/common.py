from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import List

from splat_graph.core.config import ExperimentConfig, load_experiment_config
from splat_graph.core.errors import DatasetError

GT_CHECKPOINT = 'gt_scene.ckpt'
ASSOCIATION_FILE = 'association.json'


def add_dataset_argument(parser: ArgumentParser, required: bool = True) -> None:
    parser.add_argument('--dataset', type=Path, required=required, help="Dataset directory")


def add_config_arguments(parser: ArgumentParser) -> None:
    parser.add_argument('--config', type=Path, help="Experiment config JSON")
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help="Dotted config override, repeatable")
    parser.add_argument('--seed', type=int, help="Shortcut for --set trainer.seed=N")
    parser.add_argument('--iterations', type=int, help="Shortcut for --set trainer.iterations=N")


def resolve_config(args: Namespace) -> ExperimentConfig:
    overrides: List[str] = list(getattr(args, 'overrides', []) or [])
    if getattr(args, 'seed', None) is not None:
        overrides.append(f"trainer.seed={args.seed}")
    if getattr(args, 'iterations', None) is not None:
        overrides.append(f"trainer.iterations={args.iterations}")
    return load_experiment_config(getattr(args, 'config', None), overrides)


def require_dir(path: Path) -> Path:
    if not Path(path).is_dir():
        raise DatasetError(f"Not a directory: {path}", path=str(path))
    return Path(path)


__all__ = [
    'GT_CHECKPOINT',
    'ASSOCIATION_FILE',
    'add_dataset_argument',
    'add_config_arguments',
    'resolve_config',
    'require_dir'
]
