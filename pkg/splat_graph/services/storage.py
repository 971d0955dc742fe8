from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import io
import logging

import imageio.v3 as iio
import numpy as np
import torch

from splat_graph.core.config import settings
from splat_graph.core.constants import NodeKind
from splat_graph.core.errors import CheckpointError, DatasetError
from splat_graph.models.camera import Camera
from splat_graph.models.dataset import (
    DepthSamples,
    DetectedTracklet,
    PoseInit,
    SceneDataset,
    Tracklet3D
)
from splat_graph.models.gaussians import GaussianSet
from splat_graph.models.human import ArticulatedTemplate, BodyPoseSequence
from splat_graph.models.scene import EnvironmentMap, SceneGraph, SceneNode, TrackedPose
from splat_graph.services.deformation import DeformationNet
from splat_graph.utils.helpers import dump_json, hash_bytes, load_json

logger = logging.getLogger(__name__)

FLOAT = '<f4'
INT = '<i4'
CHECKPOINT_FORMAT = 'splat-graph-checkpoint'
ASSET_FORMAT = 'splat-graph-asset'


def _frame_name(frame: int) -> str:
    return f"{frame:06d}"


def _require(path: Path) -> Path:
    if not path.exists():
        raise DatasetError(f"Missing file: {path}", path=str(path))
    return path


# Raster and binary arrays

def write_image(path: Path, image: np.ndarray) -> None:
    """8-bit PNG of a float image in [0, 1]"""
    path.parent.mkdir(parents=True, exist_ok=True)
    iio.imwrite(path, np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8))


def read_image(path: Path) -> np.ndarray:
    """Float32 RGB in [0, 1] from an 8- or 16-bit raster"""
    raw = iio.imread(_require(path))
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    image = raw.astype(np.float32) / scale
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    return image[..., :3]


def write_mask(path: Path, mask: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    iio.imwrite(path, mask.astype(np.uint8) * 255)


def read_mask(path: Path) -> np.ndarray:
    raw = iio.imread(_require(path))
    if raw.ndim == 3:
        raw = raw[..., 0]
    return raw > 0


def write_array(path: Path, array: np.ndarray, dtype: str = FLOAT) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(array, dtype=dtype).tofile(path)


def read_array(path: Path, dtype: str = FLOAT, columns: Optional[int] = None) -> np.ndarray:
    data = np.fromfile(_require(path), dtype=dtype)
    if columns is not None:
        if data.size % columns:
            raise DatasetError(f"{path} does not hold rows of {columns} values", path=str(path))
        data = data.reshape(-1, columns)
    return data


# Templates

TEMPLATE_ARRAYS = (
    ('vertices', FLOAT), ('faces', INT), ('joints', FLOAT), ('skinning', FLOAT),
    ('shape_basis', FLOAT), ('pose_basis', FLOAT), ('joint_regressor', FLOAT)
)


def save_template(template: ArticulatedTemplate, directory: Path) -> Path:
    """{name}.json with array layout plus {name}.bin with the values"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layout, chunks, offset = [], [], 0
    for name, dtype in TEMPLATE_ARRAYS:
        value = getattr(template, name)
        if value is None:
            continue
        array = np.ascontiguousarray(value.detach().cpu().numpy(), dtype=dtype)
        layout.append({'name': name, 'dtype': dtype, 'shape': list(array.shape), 'offset': offset})
        chunks.append(array.tobytes())
        offset += array.nbytes
    (directory / f"{template.name}.bin").write_bytes(b''.join(chunks))
    dump_json({'name': template.name, 'parents': list(template.parents), 'arrays': layout},
              directory / f"{template.name}.json")
    return directory / f"{template.name}.json"


def load_template(path: Path, dtype: Optional[torch.dtype] = None) -> ArticulatedTemplate:
    path = _require(Path(path))
    meta = load_json(path)
    blob = _require(path.with_suffix('.bin')).read_bytes()
    arrays: Dict[str, torch.Tensor] = {}
    for entry in meta['arrays']:
        count = int(np.prod(entry['shape'])) if entry['shape'] else 1
        array = np.frombuffer(blob, dtype=entry['dtype'], count=count, offset=entry['offset'])
        array = array.reshape(entry['shape'])
        if entry['dtype'] == INT:
            arrays[entry['name']] = torch.as_tensor(array.astype(np.int64))
        else:
            arrays[entry['name']] = torch.as_tensor(array.copy()).to(dtype or torch.get_default_dtype())
    return ArticulatedTemplate(
        name=meta['name'],
        vertices=arrays['vertices'],
        faces=arrays['faces'],
        joints=arrays['joints'],
        parents=[int(p) for p in meta['parents']],
        skinning=arrays['skinning'],
        shape_basis=arrays['shape_basis'],
        pose_basis=arrays.get('pose_basis'),
        joint_regressor=arrays.get('joint_regressor')
    )


# Pose files

def poses_init_to_dict(poses: PoseInit) -> Dict[str, Any]:
    return {
        'tracks': {
            track_id: {
                'quats': seq.quats.detach().cpu().numpy(),
                'valid': seq.valid.cpu().numpy(),
                'provenance': seq.provenance.cpu().numpy()
            }
            for track_id, seq in sorted(poses.sequences.items())
        },
        'demoted': list(poses.demoted),
        'matches': list(poses.matches)
    }


def poses_init_from_dict(data: Dict[str, Any], dtype: Optional[torch.dtype] = None) -> PoseInit:
    dtype = dtype or torch.get_default_dtype()
    sequences = {
        track_id: BodyPoseSequence(
            quats=torch.as_tensor(np.asarray(entry['quats'], dtype=np.float64)).to(dtype),
            valid=torch.as_tensor(np.asarray(entry['valid'], dtype=bool)),
            provenance=torch.as_tensor(np.asarray(entry['provenance'], dtype=np.int64))
        )
        for track_id, entry in data.get('tracks', {}).items()
    }
    return PoseInit(sequences=sequences, demoted=list(data.get('demoted', [])), matches=list(data.get('matches', [])))


def save_poses_init(poses: PoseInit, path: Path) -> None:
    dump_json(poses_init_to_dict(poses), Path(path))


def load_poses_init(path: Path, dtype: Optional[torch.dtype] = None) -> PoseInit:
    return poses_init_from_dict(load_json(_require(Path(path))), dtype)


# Datasets

def _tracklet_to_dict(t: Tracklet3D) -> Dict[str, Any]:
    return {'id': t.track_id, 'label': t.label, 'centers': t.centers, 'yaws': t.yaws, 'dims': t.dims, 'valid': t.valid}


def _tracklet_from_dict(d: Dict[str, Any]) -> Tracklet3D:
    return Tracklet3D(
        track_id=str(d['id']),
        label=str(d['label']),
        centers=np.asarray(d['centers'], dtype=np.float64).reshape(-1, 3),
        yaws=np.asarray(d['yaws'], dtype=np.float64),
        dims=np.asarray(d['dims'], dtype=np.float64).reshape(-1, 3),
        valid=np.asarray(d['valid'], dtype=bool)
    )


def _detection_to_dict(d: DetectedTracklet) -> Dict[str, Any]:
    return {
        'det_id': d.det_id, 'joints': int(d.poses.shape[1]), 'boxes': d.boxes, 'box_valid': d.box_valid,
        'poses': d.poses, 'pose_valid': d.pose_valid
    }


def _detection_from_dict(camera_id: int, d: Dict[str, Any]) -> DetectedTracklet:
    boxes = np.asarray(d['boxes'], dtype=np.float64).reshape(-1, 4)
    poses = np.asarray(d['poses'], dtype=np.float64)
    return DetectedTracklet(
        camera_id=camera_id,
        det_id=str(d['det_id']),
        boxes=boxes,
        box_valid=np.asarray(d['box_valid'], dtype=bool),
        poses=poses.reshape(boxes.shape[0], int(d.get('joints', 0)), 4),
        pose_valid=np.asarray(d['pose_valid'], dtype=bool)
    )


def save_dataset(dataset: SceneDataset, root: Path, float_images: bool = False) -> Path:
    """Write the dataset directory; float sidecars keep images lossless when requested"""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    dump_json({
        'schema_version': dataset.schema_version,
        'scene_id': dataset.scene_id,
        'frame_count': dataset.frame_count,
        'camera_ids': dataset.camera_ids,
        'timestamps': dataset.timestamps,
        'float_images': float_images,
        'semantic': bool(dataset.semantic_masks),
        'template': dataset.template.name if dataset.template is not None else None
    }, root / 'manifest.json')
    dump_json([
        {'frame': frame, **camera.to_dict()}
        for (camera_id, frame), camera in sorted(dataset.cameras.items())
    ], root / 'cameras.json')

    for (camera_id, frame), image in sorted(dataset.images.items()):
        stem = f"cam{camera_id}/{_frame_name(frame)}"
        write_image(root / 'images' / f"{stem}.png", image)
        if float_images:
            write_array(root / 'images' / f"{stem}.bin", image.reshape(-1))
    for (camera_id, frame), samples in sorted(dataset.depth.items()):
        rows = np.concatenate([samples.uv.reshape(-1, 2), samples.ranges.reshape(-1, 1)], axis=1)
        write_array(root / 'depth' / f"cam{camera_id}" / f"{_frame_name(frame)}.bin", rows)
    for (camera_id, frame), mask in sorted(dataset.sky_masks.items()):
        write_mask(root / 'sky' / f"cam{camera_id}" / f"{_frame_name(frame)}.png", mask)
    for (camera_id, frame), labels in sorted(dataset.semantic_masks.items()):
        path = root / 'semantic' / f"cam{camera_id}" / f"{_frame_name(frame)}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        iio.imwrite(path, labels.astype(np.uint8))

    dump_json([_tracklet_to_dict(t) for t in dataset.tracklets], root / 'tracklets_3d.json')
    for camera_id, detections in sorted(dataset.detections.items()):
        dump_json({'camera_id': camera_id, 'detections': [_detection_to_dict(d) for d in detections]},
                  root / f"detections_cam{camera_id}.json")
    if dataset.poses_init is not None:
        save_poses_init(dataset.poses_init, root / 'poses_init.json')
    if dataset.template is not None:
        save_template(dataset.template, root / 'template')
    logger.info(f"Saved dataset {dataset.scene_id} to {root}", extra={'scene_id': dataset.scene_id})
    return root


def load_dataset(root: Path, dtype: Optional[torch.dtype] = None) -> SceneDataset:
    root = Path(root)
    manifest = load_json(_require(root / 'manifest.json'))
    version = int(manifest.get('schema_version', -1))
    if version != settings.DATASET_SCHEMA_VERSION:
        raise DatasetError(
            f"Dataset schema version {version} does not match supported version {settings.DATASET_SCHEMA_VERSION}",
            path=str(root / 'manifest.json')
        )
    frame_count = int(manifest['frame_count'])
    camera_ids = [int(c) for c in manifest['camera_ids']]
    timestamps = np.asarray(manifest['timestamps'], dtype=np.float64)
    if timestamps.shape[0] != frame_count:
        raise DatasetError("Manifest timestamps do not match frame count", path=str(root / 'manifest.json'))

    cameras: Dict[Tuple[int, int], Camera] = {}
    for entry in load_json(_require(root / 'cameras.json')):
        camera = Camera.from_dict(entry, dtype=dtype)
        cameras[(camera.camera_id, int(entry['frame']))] = camera

    images, depth, sky, semantic = {}, {}, {}, {}
    for camera_id in camera_ids:
        for frame in range(frame_count):
            key = (camera_id, frame)
            if key not in cameras:
                raise DatasetError(f"cameras.json has no entry for camera {camera_id} frame {frame}",
                                   path=str(root / 'cameras.json'))
            camera = cameras[key]
            stem = f"cam{camera_id}/{_frame_name(frame)}"
            sidecar = root / 'images' / f"{stem}.bin"
            if manifest.get('float_images') and sidecar.exists():
                images[key] = read_array(sidecar).reshape(camera.height, camera.width, 3)
            else:
                images[key] = read_image(root / 'images' / f"{stem}.png")
            if images[key].shape[:2] != (camera.height, camera.width):
                raise DatasetError(f"Image size does not match camera {camera_id}",
                                   path=str(root / 'images' / f"{stem}.png"))

            depth_path = root / 'depth' / f"{stem}.bin"
            if depth_path.exists():
                rows = read_array(depth_path, columns=3)
                uv = rows[:, :2]
                inside = (uv[:, 0] >= 0) & (uv[:, 0] < camera.width) & (uv[:, 1] >= 0) & (uv[:, 1] < camera.height)
                if not bool(inside.all()):
                    raise DatasetError(f"Depth sample outside image bounds in {depth_path}", path=str(depth_path))
                depth[key] = DepthSamples(uv.astype(np.float32), rows[:, 2].astype(np.float32))
            sky_path = root / 'sky' / f"{stem}.png"
            if sky_path.exists():
                sky[key] = read_mask(sky_path)
            if manifest.get('semantic'):
                raw = iio.imread(_require(root / 'semantic' / f"{stem}.png"))
                semantic[key] = raw if raw.ndim == 2 else raw[..., 0]

    tracklets = [_tracklet_from_dict(d) for d in load_json(_require(root / 'tracklets_3d.json'))]
    detections = {}
    for camera_id in camera_ids:
        path = root / f"detections_cam{camera_id}.json"
        if path.exists():
            detections[camera_id] = [_detection_from_dict(camera_id, d) for d in load_json(path)['detections']]

    poses_path = root / 'poses_init.json'
    poses_init = load_poses_init(poses_path, dtype) if poses_path.exists() else None
    template = None
    if manifest.get('template'):
        template = load_template(root / 'template' / f"{manifest['template']}.json", dtype)

    return SceneDataset(
        scene_id=str(manifest['scene_id']),
        timestamps=timestamps,
        cameras=cameras,
        images=images,
        depth=depth,
        sky_masks=sky,
        semantic_masks=semantic,
        tracklets=tracklets,
        detections=detections,
        poses_init=poses_init,
        template=template,
        schema_version=version
    )


# Scene state

def _tensor(x: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
    return None if x is None else x.detach().cpu().clone()


def template_state(template: Optional[ArticulatedTemplate]) -> Optional[Dict[str, Any]]:
    if template is None:
        return None
    state = {name: _tensor(getattr(template, name)) for name, _ in TEMPLATE_ARRAYS}
    state.update(name=template.name, parents=list(template.parents))
    return state


def template_from_state(state: Optional[Dict[str, Any]]) -> Optional[ArticulatedTemplate]:
    if state is None:
        return None
    return ArticulatedTemplate(**{k: state[k] for k in (
        'name', 'vertices', 'faces', 'joints', 'parents', 'skinning', 'shape_basis', 'pose_basis', 'joint_regressor'
    )})


def node_state(node: SceneNode) -> Dict[str, Any]:
    pose = node.pose
    return {
        'node_id': node.node_id,
        'label': node.label,
        'kind': node.kind.value,
        'payload': {k: _tensor(v) for k, v in node.payload.columns().items()},
        'pose': {
            'base_rotation': _tensor(pose.base_rotation),
            'base_translation': _tensor(pose.base_translation),
            'valid': _tensor(pose.valid),
            'residual_rotation': _tensor(pose.residual_rotation),
            'residual_translation': _tensor(pose.residual_translation)
        },
        'template': template_state(node.template),
        'betas': _tensor(node.betas),
        'skin_logits': _tensor(node.skin_logits),
        'body_pose': None if node.body_pose is None else {
            'quats': _tensor(node.body_pose.quats),
            'valid': _tensor(node.body_pose.valid),
            'provenance': _tensor(node.body_pose.provenance)
        },
        'embedding': _tensor(node.embedding),
        'anchors': _tensor(node.anchors),
        'anchor_box': None if node.anchor_box is None else [_tensor(x) for x in node.anchor_box],
        'deformation_net': net_state(node.deformation_net)
    }


def node_from_state(state: Dict[str, Any]) -> SceneNode:
    body = state.get('body_pose')
    return SceneNode(
        node_id=state['node_id'],
        label=state['label'],
        kind=NodeKind(state['kind']),
        payload=GaussianSet(**state['payload']),
        pose=TrackedPose(**state['pose']),
        template=template_from_state(state.get('template')),
        betas=state.get('betas'),
        skin_logits=state.get('skin_logits'),
        body_pose=None if body is None else BodyPoseSequence(**body),
        embedding=state.get('embedding'),
        anchors=state.get('anchors'),
        anchor_box=None if state.get('anchor_box') is None else tuple(state['anchor_box']),
        deformation_net=net_from_state(state.get('deformation_net'))
    )


def net_state(net: Optional[DeformationNet]) -> Optional[Dict[str, Any]]:
    if net is None:
        return None
    return {
        'hyperparameters': net.hyperparameters(),
        'dtype': str(next(net.parameters()).dtype).replace('torch.', ''),
        'weights': {k: _tensor(v) for k, v in net.state_dict().items()}
    }


def net_from_state(state: Optional[Dict[str, Any]]) -> Optional[DeformationNet]:
    if state is None:
        return None
    net = DeformationNet(**state['hyperparameters']).to(getattr(torch, state['dtype']))
    net.load_state_dict(state['weights'])
    return net


def scene_state(scene: SceneGraph) -> Dict[str, Any]:
    return {
        'scene_id': scene.scene_id,
        'background': {k: _tensor(v) for k, v in scene.background.columns().items()},
        'sky': None if scene.sky is None else _tensor(scene.sky.texels),
        'nodes': [node_state(n) for n in scene.nodes],
        'timestamps': _tensor(scene.timestamps),
        'deformation_net': net_state(scene.deformation_net),
        'scene_extent': float(scene.scene_extent),
        'use_lbs': bool(scene.use_lbs),
        'use_deformation': bool(scene.use_deformation),
        'metadata': dict(scene.metadata)
    }


def scene_from_state(state: Dict[str, Any]) -> SceneGraph:
    return SceneGraph(
        scene_id=state['scene_id'],
        background=GaussianSet(**state['background']),
        sky=None if state['sky'] is None else EnvironmentMap(state['sky']),
        nodes=[node_from_state(n) for n in state['nodes']],
        timestamps=state['timestamps'],
        deformation_net=net_from_state(state.get('deformation_net')),
        scene_extent=state['scene_extent'],
        use_lbs=state['use_lbs'],
        use_deformation=state['use_deformation'],
        metadata=dict(state.get('metadata', {}))
    )


# Checksummed containers

def _write_container(path: Path, fmt: str, payload: Dict[str, Any]) -> Path:
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    data = buffer.getvalue()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({'format': fmt, 'version': settings.CHECKPOINT_VERSION, 'sha256': hash_bytes(data), 'payload': data},
               path)
    return path


def _read_container(path: Path, fmt: str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Missing file: {path}", path=str(path))
    try:
        outer = torch.load(path, map_location='cpu', weights_only=False)
    except Exception as e:
        raise CheckpointError(f"Cannot read {path}: {e}", path=str(path))
    if not isinstance(outer, dict) or outer.get('format') != fmt:
        raise CheckpointError(f"{path} is not a {fmt} file", path=str(path))
    if outer.get('version') != settings.CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has version {outer.get('version')}, expected {settings.CHECKPOINT_VERSION}", path=str(path)
        )
    if hash_bytes(outer['payload']) != outer.get('sha256'):
        raise CheckpointError(f"Checksum mismatch in {path}", path=str(path))
    return torch.load(io.BytesIO(outer['payload']), map_location='cpu', weights_only=False)


@dataclass
class Checkpoint:
    scene: SceneGraph
    iteration: int = 0
    optimizer_state: Optional[Dict[str, Any]] = None
    config: Optional[Dict[str, Any]] = None
    rng_state: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path = _write_container(path, CHECKPOINT_FORMAT, {
        'scene': scene_state(checkpoint.scene),
        'iteration': checkpoint.iteration,
        'optimizer': checkpoint.optimizer_state,
        'config': checkpoint.config,
        'rng': checkpoint.rng_state,
        'extra': checkpoint.extra
    })
    logger.info(f"Checkpoint written to {path}", extra={'iteration': checkpoint.iteration,
                                                         'scene_id': checkpoint.scene.scene_id})
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    state = _read_container(path, CHECKPOINT_FORMAT)
    return Checkpoint(
        scene=scene_from_state(state['scene']),
        iteration=int(state['iteration']),
        optimizer_state=state.get('optimizer'),
        config=state.get('config'),
        rng_state=state.get('rng'),
        extra=dict(state.get('extra') or {})
    )


# Node assets

@dataclass
class NodeAsset:
    node: SceneNode
    deformation_net: Optional[DeformationNet] = None
    source_scene: str = ''


def export_node(scene: SceneGraph, node_id: str, path: Path) -> Path:
    """Write one node's payload and metadata for reuse by insert"""
    node = scene.node(node_id)
    net = scene.net_for(node) if node.kind == NodeKind.DEFORMABLE else None
    path = _write_container(path, ASSET_FORMAT, {
        'node': node_state(node),
        'deformation_net': net_state(net),
        'source_scene': scene.scene_id,
        'blobs': node.payload.count
    })
    logger.info(f"Exported node {node_id} ({node.kind.value}, {node.payload.count} blobs) to {path}",
                extra={'node_id': node_id})
    return path


def import_node(path: Path) -> NodeAsset:
    state = _read_container(path, ASSET_FORMAT)
    return NodeAsset(
        node=node_from_state(state['node']),
        deformation_net=net_from_state(state.get('deformation_net')),
        source_scene=str(state.get('source_scene', ''))
    )


__all__ = [
    'Checkpoint',
    'NodeAsset',
    'write_image',
    'read_image',
    'write_mask',
    'read_mask',
    'write_array',
    'read_array',
    'save_template',
    'load_template',
    'save_poses_init',
    'load_poses_init',
    'poses_init_to_dict',
    'poses_init_from_dict',
    'save_dataset',
    'load_dataset',
    'scene_state',
    'scene_from_state',
    'save_checkpoint',
    'load_checkpoint',
    'export_node',
    'import_node'
]
