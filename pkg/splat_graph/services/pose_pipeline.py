from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from splat_graph.core.config import PosePrepConfig
from splat_graph.core.constants import PoseProvenance
from splat_graph.core.errors import ValidationError
from splat_graph.models.camera import Camera
from splat_graph.models.dataset import DetectedTracklet, PoseInit, SceneDataset, Tracklet3D
from splat_graph.models.geometry import align_quat_signs, quat_multiply, quat_normalize, quat_slerp, yaw_quat
from splat_graph.models.human import BodyPoseSequence

logger = logging.getLogger(__name__)

MIN_BOX_AREA = 1.0  # px^2

PairKey = Tuple[str, int]  # (track_id, camera_id)


# Corner pairs joined by a box edge; corners differ in exactly one sign
BOX_EDGES = [(i, i ^ bit) for i in range(8) for bit in (1, 2, 4) if i < i ^ bit]


def clip_to_near(p: np.ndarray, near: float) -> np.ndarray:
    """Camera-frame corners in front of `near` plus the edge crossings of that plane"""
    front = p[:, 2] > near
    points = [p[front]]
    for a, b in BOX_EDGES:
        if front[a] != front[b]:
            w = (near - p[a, 2]) / (p[b, 2] - p[a, 2])
            crossing = p[a] + w * (p[b] - p[a])
            crossing[2] = near
            points.append(crossing[None, :])
    return np.concatenate(points)


def project_box(tracklet: Tracklet3D, frame: int, camera: Camera) -> Optional[np.ndarray]:
    """Clamped pixel hull (x0, y0, x1, y1) of the box clipped to the near plane"""
    corners = tracklet.corners(frame)
    R = camera.world_to_camera.rotation_matrix.detach().cpu().numpy().astype(np.float64)
    t = camera.world_to_camera.translation.detach().cpu().numpy().astype(np.float64)
    p = corners @ R.T + t
    if not bool((p[:, 2] > camera.near).any()):
        return None
    p = clip_to_near(p, camera.near)
    u = camera.fx * p[:, 0] / p[:, 2] + camera.cx
    v = camera.fy * p[:, 1] / p[:, 2] + camera.cy
    box = np.array([
        np.clip(u.min(), 0.0, camera.width),
        np.clip(v.min(), 0.0, camera.height),
        np.clip(u.max(), 0.0, camera.width),
        np.clip(v.max(), 0.0, camera.height)
    ])
    if box_area(box) < MIN_BOX_AREA:
        return None
    return box


def box_area(box: np.ndarray) -> float:
    return float(max(box[2] - box[0], 0.0) * max(box[3] - box[1], 0.0))


def iou2d(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two axis-aligned boxes"""
    area_a, area_b = box_area(a), box_area(b)
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    inter = box_area(np.array([max(a[0], b[0]), max(a[1], b[1]), min(a[2], b[2]), min(a[3], b[3])]))
    union = area_a + area_b - inter
    return float(inter / union) if union > 0.0 else 0.0


def solve_assignment(scores: np.ndarray) -> List[Tuple[int, int]]:
    """One-to-one pairs maximizing the total score"""
    if scores.size == 0:
        return []
    rows, cols = linear_sum_assignment(-scores)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


@dataclass
class MatchResult:
    """Per (track, camera): matched detection, its mean IoU and per-frame IoUs"""
    matches: Dict[PairKey, Optional[str]] = field(default_factory=dict)
    scores: Dict[PairKey, float] = field(default_factory=dict)
    frame_iou: Dict[PairKey, np.ndarray] = field(default_factory=dict)  # (T,), NaN where not co-valid
    score_matrices: Dict[int, np.ndarray] = field(default_factory=dict)

    def matched_cameras(self, track_id: str) -> List[int]:
        return sorted(c for (h, c), j in self.matches.items() if h == track_id and j is not None)

    def table(self) -> List[Dict[str, object]]:
        rows = []
        for (h, c), j in sorted(self.matches.items(), key=lambda item: (item[0][0], item[0][1])):
            rows.append({'track_id': h, 'camera_id': c, 'det_id': j, 'mean_iou': self.scores.get((h, c), 0.0)})
        return rows


def _pair_ious(
    tracklet: Tracklet3D,
    detection: DetectedTracklet,
    cameras: Mapping[Tuple[int, int], Camera],
    frames: Sequence[int]
) -> np.ndarray:
    ious = np.full(tracklet.frame_count, np.nan)
    for f in frames:
        if not (tracklet.valid[f] and detection.box_valid[f]):
            continue
        camera = cameras.get((detection.camera_id, f))
        if camera is None:
            continue
        projected = project_box(tracklet, f, camera)
        det_box = detection.clamp(camera.width, camera.height).boxes[f]
        ious[f] = 0.0 if projected is None else iou2d(projected, det_box)
    return ious


def match_tracklets(
    gt: Sequence[Tracklet3D],
    detections: Mapping[int, Sequence[DetectedTracklet]],
    cameras: Mapping[Tuple[int, int], Camera],
    frames: Sequence[int],
    threshold: float = 0.3
) -> MatchResult:
    """Per camera, optimal one-to-one assignment on mean IoU; pairs below threshold stay unmatched"""
    result = MatchResult()
    for camera_id in sorted(detections):
        dets = list(detections[camera_id])
        ids = [d.det_id for d in dets]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValidationError(
                f"Camera {camera_id} has duplicate detection ids: {', '.join(duplicates)}",
                field='det_id',
                details={'camera_id': camera_id, 'duplicates': duplicates}
            )

        ious = {}
        scores = np.zeros((len(gt), len(dets)))
        for i, tracklet in enumerate(gt):
            for j, det in enumerate(dets):
                pair = _pair_ious(tracklet, det, cameras, frames)
                ious[(i, j)] = pair
                covalid = ~np.isnan(pair)
                scores[i, j] = float(pair[covalid].mean()) if covalid.any() else 0.0
        result.score_matrices[camera_id] = scores

        for tracklet in gt:
            result.matches[(tracklet.track_id, camera_id)] = None
            result.scores[(tracklet.track_id, camera_id)] = 0.0
        for i, j in solve_assignment(scores):
            if scores[i, j] < threshold:
                continue
            key = (gt[i].track_id, camera_id)
            result.matches[key] = dets[j].det_id
            result.scores[key] = float(scores[i, j])
            result.frame_iou[key] = ious[(i, j)]
    return result


def fuse_multicam(
    track_id: str,
    match: MatchResult,
    detections: Mapping[int, Sequence[DetectedTracklet]]
) -> Tuple[Optional[np.ndarray], np.ndarray]:
    """Per frame, the matched camera's pose with the largest box IoU"""
    sources = []
    for camera_id in match.matched_cameras(track_id):
        det_id = match.matches[(track_id, camera_id)]
        det = next(d for d in detections[camera_id] if d.det_id == det_id)
        sources.append((camera_id, det, match.frame_iou[(track_id, camera_id)]))
    if not sources:
        return None, np.zeros(0, dtype=bool)

    T, K = sources[0][1].poses.shape[:2]
    quats = np.zeros((T, K, 4))
    quats[..., 0] = 1.0
    valid = np.zeros(T, dtype=bool)
    for f in range(T):
        best, best_iou = None, -1.0
        for _, det, ious in sources:
            if not det.pose_valid[f]:
                continue
            iou = 0.0 if np.isnan(ious[f]) else float(ious[f])
            if iou > best_iou:
                best, best_iou = det, iou
        if best is not None:
            quats[f] = best.poses[f]
            valid[f] = True
    return quats, valid


def complete_poses(
    quats: np.ndarray,
    valid: np.ndarray,
    tracklet: Tracklet3D,
    alignment: Sequence[float] = (1.0, 0.0, 0.0, 0.0),
    root: int = 0,
    dtype: Optional[torch.dtype] = None
) -> Optional[BodyPoseSequence]:
    """Fill gaps on box-valid frames and set the root from box yaw; None when nothing was detected"""
    dtype = dtype or torch.get_default_dtype()
    required = np.asarray(tracklet.valid, dtype=bool)
    known = np.nonzero(valid)[0].tolist() if valid.size else []
    if not known:
        return None

    T, K = quats.shape[:2]
    source = torch.as_tensor(quats, dtype=dtype)
    out = torch.zeros(T, K, 4, dtype=dtype)
    out[..., 0] = 1.0
    provenance = torch.full((T,), int(PoseProvenance.DETECTED), dtype=torch.long)

    for f in range(T):
        if valid[f]:
            out[f] = quat_normalize(source[f])
            continue
        before = [k for k in known if k < f]
        after = [k for k in known if k > f]
        if before and after:
            a, b = before[-1], after[0]
            out[f] = quat_slerp(source[a], source[b], (f - a) / (b - a))
        else:
            out[f] = quat_normalize(source[before[-1] if before else after[0]])
        if required[f]:
            provenance[f] = int(PoseProvenance.INTERPOLATED)

    align = torch.as_tensor(alignment, dtype=dtype)
    yaws = torch.as_tensor(tracklet.yaws, dtype=dtype)
    out[:, root] = quat_multiply(yaw_quat(yaws), align.expand(T, 4))
    out = align_quat_signs(out)

    return BodyPoseSequence(
        quats=out,
        valid=torch.as_tensor(required, dtype=torch.bool),
        provenance=provenance
    )


class PosePrepService:
    """Associate detections with human tracklets and build their body pose sequences"""

    def __init__(self, dataset: SceneDataset, config: Optional[PosePrepConfig] = None):
        self.dataset = dataset
        self.config = config or PosePrepConfig()

    @property
    def root(self) -> int:
        template = self.dataset.template
        return template.root if template is not None else 0

    def match(self) -> MatchResult:
        return match_tracklets(
            self.dataset.humans(),
            self.dataset.detections,
            self.dataset.cameras,
            list(range(self.dataset.frame_count)),
            threshold=self.config.match_threshold
        )

    def run(self, dtype: Optional[torch.dtype] = None) -> PoseInit:
        match = self.match()
        result = PoseInit(matches=match.table())
        for tracklet in self.dataset.humans():
            quats, valid = fuse_multicam(tracklet.track_id, match, self.dataset.detections)
            sequence = None
            if quats is not None:
                missing = int((tracklet.valid & ~valid).sum())
                if missing:
                    logger.info(f"Tracklet {tracklet.track_id}: {missing} box-valid frames lack a pose, interpolating")
                sequence = complete_poses(
                    quats, valid, tracklet,
                    alignment=self.config.body_alignment,
                    root=self.root,
                    dtype=dtype
                )
            if sequence is None:
                logger.warning(
                    f"Tracklet {tracklet.track_id} has no valid pose in any camera, demoting to deformable",
                    extra={'node_id': tracklet.track_id}
                )
                result.demoted.append(tracklet.track_id)
                continue
            result.sequences[tracklet.track_id] = sequence

        logger.info(
            f"Prepared poses for {len(result.sequences)} humans, demoted {len(result.demoted)}",
            extra={'scene_id': self.dataset.scene_id}
        )
        return result


__all__ = [
    'MatchResult',
    'PosePrepService',
    'project_box',
    'box_area',
    'iou2d',
    'solve_assignment',
    'match_tracklets',
    'fuse_multicam',
    'complete_poses'
]
