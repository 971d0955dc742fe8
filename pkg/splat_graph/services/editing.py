from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union
import logging

import orjson
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError as PydanticValidationError, \
    model_validator

from splat_graph.core.errors import EditError, SplatError
from splat_graph.models.scene import SceneGraph
from splat_graph.services.scene_graph import (
    place_asset,
    remove_node,
    retime_trajectory,
    reverse_trajectory,
    swap_asset
)
from splat_graph.services.storage import import_node, load_checkpoint

logger = logging.getLogger(__name__)


class _Edit(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SwapEdit(_Edit):
    op: Literal['swap']
    node: str
    donor_checkpoint: Path
    donor_node: str


class InsertEdit(_Edit):
    op: Literal['insert']
    asset: Path
    node_id: str
    trajectory_from: str
    offset: Optional[Tuple[float, float, float]] = None


class RemoveEdit(_Edit):
    op: Literal['remove']
    node: str


class RetimeEdit(_Edit):
    op: Literal['retime']
    node: str
    frames: Optional[List[int]] = None
    reverse: bool = False

    @model_validator(mode="after")
    def one_mapping(self) -> "RetimeEdit":
        if (self.frames is None) == (not self.reverse):
            raise ValueError("retime needs exactly one of 'frames' or 'reverse': true")
        return self


EditRecord = Annotated[Union[SwapEdit, InsertEdit, RemoveEdit, RetimeEdit], Field(discriminator='op')]
edit_script_adapter = TypeAdapter(List[EditRecord])


def parse_edit_script(data) -> List[EditRecord]:
    try:
        return edit_script_adapter.validate_python(data)
    except PydanticValidationError as e:
        raise EditError(f"Malformed edit script: {e}", op='parse')


def load_edit_script(path: Path) -> List[EditRecord]:
    path = Path(path)
    try:
        data = orjson.loads(path.read_bytes())
    except FileNotFoundError:
        raise EditError(f"Edit script not found: {path}", op='parse')
    except orjson.JSONDecodeError as e:
        raise EditError(f"Edit script {path} is not valid JSON: {e}", op='parse')
    return parse_edit_script(data)


def _resolve(path: Path, base_dir: Optional[Path]) -> Path:
    path = Path(path)
    if base_dir is not None and not path.is_absolute():
        return Path(base_dir) / path
    return path


def apply_edit(scene: SceneGraph, edit: EditRecord, base_dir: Optional[Path] = None) -> SceneGraph:
    if isinstance(edit, SwapEdit):
        donor = load_checkpoint(_resolve(edit.donor_checkpoint, base_dir)).scene
        return swap_asset(scene, edit.node, donor, edit.donor_node)
    if isinstance(edit, InsertEdit):
        asset = import_node(_resolve(edit.asset, base_dir))
        return place_asset(scene, asset.node, edit.node_id, edit.trajectory_from, edit.offset,
                           deformation_net=asset.deformation_net)
    if isinstance(edit, RemoveEdit):
        return remove_node(scene, edit.node)
    if edit.reverse:
        return reverse_trajectory(scene, edit.node)
    return retime_trajectory(scene, edit.node, edit.frames)


def apply_edit_script(
    scene: SceneGraph,
    edits: List[EditRecord],
    base_dir: Optional[Path] = None
) -> SceneGraph:
    """All edits or none; the input scene is never modified"""
    current = scene.clone()
    for index, edit in enumerate(edits):
        try:
            current = apply_edit(current, edit, base_dir)
        except SplatError as e:
            logger.warning(
                f"Edit {index} ({edit.op}) failed, rolling back {len(edits)} edits: {e.message}",
                extra={'scene_id': scene.scene_id}
            )
            raise EditError(f"Edit {index} ({edit.op}) failed: {e.message}", op=edit.op)
    logger.info(f"Applied {len(edits)} edits to {scene.scene_id}", extra={'scene_id': scene.scene_id})
    return current


__all__ = [
    'SwapEdit',
    'InsertEdit',
    'RemoveEdit',
    'RetimeEdit',
    'EditRecord',
    'parse_edit_script',
    'load_edit_script',
    'apply_edit',
    'apply_edit_script'
]
