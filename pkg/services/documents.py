"""Scene documents: the JSON schema, loading into a SceneState, saving and mesh export."""
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from body.model import BodyParams
from body.template import default_template, load_template
from config import schema_error
from geometry.boxes import BBox3D, Rect2D, RoomLayout
from geometry.camera import CameraPose, Intrinsics
from losses.state import BodyState, ObjectState, SceneState
from mesh.core import box_mesh, normalize_unit_cube
from mesh.io import load_mesh, save_obj
from mesh.sdf import DEFAULT_RESOLUTION
from services.exceptions import IoError, SchemaError

logger = logging.getLogger(__name__)

SCENE_SCHEMA = "scenefit/1"
MANIFEST_NAME = "manifest.json"

Vec3 = tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, populate_by_name=True)


class IntrinsicsModel(_Strict):
    fx: float = Field(..., gt=0.0, description="pixels")
    fy: float = Field(..., gt=0.0, description="pixels")
    cx: float
    cy: float
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)


class CameraModel(_Strict):
    intrinsics: IntrinsicsModel
    init_pitch: float = Field(0.0, description="radians")
    init_roll: float = Field(0.0, description="radians")


class BoxModel(_Strict):
    centroid: Vec3
    size: Vec3
    yaw: float = 0.0

    @field_validator("size")
    @classmethod
    def _positive(cls, value: Vec3) -> Vec3:
        if min(value) <= 0.0:
            raise ValueError(f"box size components must be positive, got {list(value)}")
        return value

    def to_box(self) -> BBox3D:
        return BBox3D(centroid=self.centroid, size=self.size, yaw=self.yaw)

    @classmethod
    def from_box(cls, box: BBox3D) -> "BoxModel":
        return cls.model_validate(box.to_dict())


class ObjectModel(_Strict):
    label: str = "object"
    mesh: str = Field(..., description="OBJ or ASCII PLY path, relative to the document")
    box: BoxModel
    detection: tuple[float, float, float, float] = Field(..., description="[xmin, ymin, xmax, ymax] in pixels")

    @field_validator("detection")
    @classmethod
    def _ordered(cls, value: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        xmin, ymin, xmax, ymax = value
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"detection needs xmin < xmax and ymin < ymax, got {list(value)}")
        return value


class BodyParamsModel(_Strict):
    translation: Vec3
    global_rotation: Vec3 = (0.0, 0.0, 0.0)
    # None means the rest pose.
    pose: list[Vec3] | None = None
    shape_scale: Vec3 = (1.0, 1.0, 1.0)


class HumanModel(_Strict):
    template: str | None = Field(None, description="template OBJ with a sidecar JSON; null for the built-in one")
    keypoints_2d: list[tuple[float, float, float]] = Field(..., description="[x, y, confidence] per keypoint")
    params: BodyParamsModel

    @field_validator("keypoints_2d")
    @classmethod
    def _confidences(cls, value: list[tuple[float, float, float]]) -> list[tuple[float, float, float]]:
        for x, y, confidence in value:
            if confidence < 0.0:
                raise ValueError(f"keypoint confidence must be non-negative, got {confidence}")
        return value


class SceneDocument(_Strict):
    """Inputs of one fit: camera, layout, objects with detections, optional human."""

    schema_version: str = Field(SCENE_SCHEMA, alias="schema")
    units: Literal["meters"] = "meters"
    camera: CameraModel
    layout: BoxModel
    objects: list[ObjectModel]
    human: HumanModel | None = None

    @field_validator("schema_version")
    @classmethod
    def _known_schema(cls, value: str) -> str:
        if value != SCENE_SCHEMA:
            raise ValueError(f"unsupported schema '{value}', expected '{SCENE_SCHEMA}'")
        return value

    def to_json(self) -> str:
        return json.dumps(self.model_dump(by_alias=True, mode="json"), indent=2) + "\n"


@dataclass(frozen=True)
class LoadedScene:
    document: SceneDocument
    path: Path
    state: SceneState


def parse_scene(raw: dict) -> SceneDocument:
    try:
        return SceneDocument.model_validate(raw)
    except ValidationError as e:
        raise schema_error(e) from e


def _resolve(base_dir: Path, relative: str) -> Path:
    path = Path(relative)
    return path if path.is_absolute() else base_dir / path


def state_from_scene(document: SceneDocument, base_dir: str | Path,
                     sdf_resolution: int = DEFAULT_RESOLUTION) -> SceneState:
    """Load meshes and template and build the initial SceneState (no SDF grids yet).

    Raises:
        SchemaError: keypoint or pose counts that do not fit the template.
        ParseError: unreadable mesh file.
        NotWatertight: an object mesh with open or non-manifold edges.
    """
    base_dir = Path(base_dir)
    objects = []
    for entry in document.objects:
        mesh_path = _resolve(base_dir, entry.mesh)
        mesh = load_mesh(mesh_path)
        mesh.check_watertight()
        objects.append(
            ObjectState(
                box=entry.box.to_box(),
                mesh=normalize_unit_cube(mesh),
                detection=Rect2D(*entry.detection),
                label=entry.label,
                mesh_path=str(mesh_path.resolve()),
            )
        )

    body = None
    keypoints = None
    human = document.human
    if human is not None:
        if human.template is None:
            template, template_path = default_template(), None
        else:
            resolved = _resolve(base_dir, human.template)
            template, template_path = load_template(resolved), str(resolved.resolve())
        if len(human.keypoints_2d) != len(template.keypoint_map):
            raise SchemaError(
                "human.keypoints_2d",
                f"{len(human.keypoints_2d)} keypoints, template maps {len(template.keypoint_map)}",
            )
        pose = human.params.pose
        if pose is not None and len(pose) != template.joint_count:
            raise SchemaError("human.params.pose", f"{len(pose)} joints, template has {template.joint_count}")
        params = BodyParams(
            translation=human.params.translation,
            global_rotation=human.params.global_rotation,
            pose=np.zeros((template.joint_count, 3)) if pose is None else pose,
            shape_scale=human.params.shape_scale,
        )
        body = BodyState(template, params, template_path)
        keypoints = np.array(human.keypoints_2d, dtype=float)

    intrinsics = Intrinsics(**document.camera.intrinsics.model_dump())
    return SceneState(
        camera=CameraPose(pitch=document.camera.init_pitch, roll=document.camera.init_roll),
        intrinsics=intrinsics,
        layout=RoomLayout(document.layout.to_box()),
        objects=tuple(objects),
        body=body,
        keypoints_2d=keypoints,
        sdf_resolution=sdf_resolution,
    )


def load_scene(path: str | Path, sdf_resolution: int = DEFAULT_RESOLUTION) -> LoadedScene:
    """Read, validate and load a scene document; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoError(str(path), e) from e
    except json.JSONDecodeError as e:
        raise SchemaError("<root>", f"invalid JSON in {path} ({e})") from e
    document = parse_scene(raw)
    state = state_from_scene(document, path.parent, sdf_resolution)
    logger.info(f"Loaded scene {path}: {len(state.objects)} object(s), human {'yes' if state.body else 'no'}")
    return LoadedScene(document, path, state)


def _relative(target: str, base_dir: Path) -> str:
    try:
        return os.path.relpath(target, base_dir.resolve())
    except ValueError:
        # Different drive on Windows.
        return target


def document_from_state(state: SceneState, path: str | Path) -> SceneDocument:
    """Describe `state` as a document to be written at `path`.

    Object meshes without a source file are written next to the document.
    """
    path = Path(path)
    base_dir = path.parent
    objects = []
    for i, obj in enumerate(state.objects):
        mesh_path = obj.mesh_path
        if mesh_path is None:
            mesh_path = str(save_obj(obj.mesh, base_dir / f"{path.stem}_meshes" / f"object_{i}.obj").resolve())
        objects.append(
            ObjectModel(
                label=obj.label,
                mesh=_relative(mesh_path, base_dir),
                box=BoxModel.from_box(obj.box),
                detection=tuple(obj.detection.as_list()),
            )
        )

    human = None
    if state.body is not None:
        params = state.body.params
        template = state.body.template_path
        keypoints = state.keypoints_2d if state.keypoints_2d is not None else np.zeros((0, 3))
        human = HumanModel(
            template=None if template is None else _relative(template, base_dir),
            keypoints_2d=[tuple(float(v) for v in row) for row in keypoints],
            params=BodyParamsModel(**params.to_dict()),
        )

    K = state.intrinsics
    return SceneDocument(
        camera=CameraModel(
            intrinsics=IntrinsicsModel(fx=K.fx, fy=K.fy, cx=K.cx, cy=K.cy, width=K.width, height=K.height),
            init_pitch=state.camera.pitch,
            init_roll=state.camera.roll,
        ),
        layout=BoxModel.from_box(state.layout.box),
        objects=objects,
        human=human,
    )


def save_scene(state: SceneState, path: str | Path) -> Path:
    """Write `state` as a scene document; loading it back reproduces the state."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(str(path.parent), e) from e
    text = document_from_state(state, path).to_json()
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(str(path), e) from e
    logger.info(f"Saved scene to {path}")
    return path


def _safe_label(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in label) or "object"


def export_meshes(state: SceneState, out_dir: str | Path) -> Path:
    """Write placed object meshes, the body mesh and the layout box as OBJ plus a manifest.

    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    entries = []
    for i, obj in enumerate(state.objects):
        name = f"object_{i:02d}_{_safe_label(obj.label)}.obj"
        save_obj(obj.placed, out_dir / name)
        entries.append({"kind": "object", "index": i, "label": obj.label, "path": name})
    if state.body is not None:
        save_obj(state.body.mesh, out_dir / "body.obj")
        entries.append({"kind": "body", "path": "body.obj"})
    save_obj(box_mesh(state.layout.box), out_dir / "layout.obj")
    entries.append({"kind": "layout", "path": "layout.obj"})

    manifest = out_dir / MANIFEST_NAME
    try:
        manifest.write_text(json.dumps({"schema": SCENE_SCHEMA, "meshes": entries}, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(str(manifest), e) from e
    logger.info(f"Exported {len(entries)} mesh(es) to {out_dir}")
    return manifest
