from argparse import Namespace
from pathlib import Path
import logging

import numpy as np
import torch

from splat_graph.cli.handlers.common import add_dataset_argument, require_dir
from splat_graph.core.errors import EXIT_OK, ValidationError
from splat_graph.services.rasterizer import render
from splat_graph.services.scene_graph import assemble_world
from splat_graph.services.storage import load_checkpoint, load_dataset, write_image

logger = logging.getLogger(__name__)


def render_times(start: float, end: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ValidationError(f"Time step must be positive, got {step}", field='step')
    if end < start:
        raise ValidationError(f"End time {end} precedes start time {start}", field='end')
    count = int(np.floor((end - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def cmd_render(args: Namespace) -> int:
    """Numbered frames per camera at possibly fractional frame times"""
    scene = load_checkpoint(args.checkpoint).scene
    dataset = load_dataset(require_dir(args.dataset))
    camera_ids = [args.camera] if args.camera is not None else dataset.camera_ids
    end = args.end if args.end is not None else float(scene.frame_count - 1)
    times = render_times(args.start, end, args.step)

    out = Path(args.out)
    written = 0
    with torch.no_grad():
        for index, t in enumerate(times):
            world = assemble_world(scene, float(t))
            for camera_id in camera_ids:
                camera = dataset.camera_at(camera_id, float(t)).to(scene.dtype)
                output = render(camera, world, scene.sky, track_abs_grad=False)
                write_image(out / f"cam{camera_id}" / f"{index:05d}.png", output.color.clamp(0.0, 1.0).cpu().numpy())
                written += 1
    logger.info(f"Rendered {written} frames to {out}", extra={'scene_id': scene.scene_id})
    print(f"frames  {written}")
    print(f"out     {out}")
    return EXIT_OK


def register_render_handlers(subparsers) -> None:
    parser = subparsers.add_parser('render', help="Render image sequences from a checkpoint")
    parser.add_argument('--checkpoint', type=Path, required=True)
    add_dataset_argument(parser)
    parser.add_argument('--camera', type=int, help="Camera id, all cameras when omitted")
    parser.add_argument('--start', type=float, default=0.0, help="First frame time")
    parser.add_argument('--end', type=float, help="Last frame time, defaults to the last frame")
    parser.add_argument('--step', type=float, default=1.0, help="Frame time step, below 1 interpolates")
    parser.add_argument('--out', type=Path, required=True, help="Output directory")
    parser.set_defaults(handler=cmd_render)


__all__ = ['cmd_render', 'register_render_handlers', 'render_times']
