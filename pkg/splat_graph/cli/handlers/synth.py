from argparse import Namespace
from pathlib import Path
import logging

from splat_graph.cli.handlers.common import ASSOCIATION_FILE, GT_CHECKPOINT
from splat_graph.core.constants import NodeKind
from splat_graph.core.errors import EXIT_OK
from splat_graph.services.storage import Checkpoint, save_checkpoint, save_dataset
from splat_graph.services.synthetic import generate_synthetic, load_synthetic_spec
from splat_graph.utils.helpers import dump_json

logger = logging.getLogger(__name__)


def cmd_synth(args: Namespace) -> int:
    """Generate the procedural scene, write the dataset and the ground-truth checkpoint"""
    overrides = {}
    if args.frames is not None:
        overrides['frames'] = args.frames
    if args.seed is not None:
        overrides['seed'] = args.seed
    spec = load_synthetic_spec(args.spec, overrides)
    result = generate_synthetic(spec)

    out = Path(args.out)
    save_dataset(result.dataset, out, float_images=True)
    save_checkpoint(Checkpoint(scene=result.scene, extra={'synthetic_spec': spec.model_dump(mode="json")}),
                    out / GT_CHECKPOINT)
    dump_json(result.association, out / ASSOCIATION_FILE)

    dataset, scene = result.dataset, result.scene
    kinds = {kind.value: sum(1 for n in scene.nodes if n.kind == kind) for kind in NodeKind}
    print(f"scene       {dataset.scene_id}")
    print(f"frames      {dataset.frame_count}")
    print(f"cameras     {dataset.camera_count}")
    print(f"tracklets   {len(dataset.tracklets)} ({', '.join(f'{k}={v}' for k, v in kinds.items())})")
    print(f"detections  {sum(len(d) for d in dataset.detections.values())}")
    print(f"depth       {sum(s.count for s in dataset.depth.values())}")
    print(f"blobs       {scene.background.count + sum(n.payload.count for n in scene.nodes)}")
    return EXIT_OK


def register_synth_handlers(subparsers) -> None:
    parser = subparsers.add_parser('synth', help="Generate a synthetic dataset")
    parser.add_argument('--spec', type=Path, help="Synthetic scene spec JSON")
    parser.add_argument('--frames', type=int, help="Override the frame count")
    parser.add_argument('--seed', type=int, help="Override the generator seed")
    parser.add_argument('--out', type=Path, required=True, help="Dataset directory to write")
    parser.set_defaults(handler=cmd_synth)


__all__ = ['cmd_synth', 'register_synth_handlers']
