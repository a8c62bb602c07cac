"""Bundled body template and the OBJ + sidecar JSON template format."""
import json
import logging
from functools import lru_cache
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from body.model import BodyTemplate
from geometry.boxes import BBox3D
from mesh.core import TriMesh, box_mesh
from mesh.io import load_mesh, save_obj
from services.exceptions import IoError, SchemaError

logger = logging.getLogger(__name__)

TEMPLATE_SCHEMA = "scenefit-template/1"
DEFAULT_SEGMENTS_PER_BONE = 4

# name, parent, rest position (absolute, meters, soles at y = 0, facing -z)
_SKELETON = [
    ("pelvis", -1, (0.0, 0.95, 0.0)),
    ("spine", 0, (0.0, 1.25, 0.0)),
    ("neck", 1, (0.0, 1.5, 0.0)),
    ("head", 2, (0.0, 1.65, 0.0)),
    ("l_shoulder", 2, (0.22, 1.45, 0.0)),
    ("l_elbow", 4, (0.32, 1.2, 0.0)),
    ("l_wrist", 5, (0.42, 0.97, 0.0)),
    ("r_shoulder", 2, (-0.22, 1.45, 0.0)),
    ("r_elbow", 7, (-0.32, 1.2, 0.0)),
    ("r_wrist", 8, (-0.42, 0.97, 0.0)),
    ("l_hip", 0, (0.12, 0.9, 0.0)),
    ("l_knee", 10, (0.12, 0.5, 0.0)),
    ("l_ankle", 11, (0.12, 0.08, 0.0)),
    ("r_hip", 0, (-0.12, 0.9, 0.0)),
    ("r_knee", 13, (-0.12, 0.5, 0.0)),
    ("r_ankle", 14, (-0.12, 0.08, 0.0)),
]

# Radius of the bone ending at each joint. The rest pose keeps every
# non-adjacent capsule pair apart.
_CAPSULE_RADII = {
    "spine": 0.07, "neck": 0.07, "head": 0.07,
    "l_shoulder": 0.05, "l_elbow": 0.045, "l_wrist": 0.04,
    "r_shoulder": 0.05, "r_elbow": 0.045, "r_wrist": 0.04,
    "l_hip": 0.05, "l_knee": 0.05, "l_ankle": 0.045,
    "r_hip": 0.05, "r_knee": 0.05, "r_ankle": 0.045,
}

# Elbows flex with positive x rotation, knees with negative.
_BEND = [("l_elbow", 0, -1), ("r_elbow", 0, -1), ("l_knee", 0, 1), ("r_knee", 0, 1)]

# (center, size, joint) solid blocks attached to a joint
_BLOCKS = {
    "pelvis": ((0.0, 0.95, 0.0), (0.3, 0.16, 0.18), "pelvis"),
    "head": ((0.0, 1.75, 0.0), (0.16, 0.22, 0.18), "head"),
    "l_hand": ((0.44, 0.9, 0.0), (0.05, 0.12, 0.08), "l_wrist"),
    "r_hand": ((-0.44, 0.9, 0.0), (0.05, 0.12, 0.08), "r_wrist"),
    "l_foot": ((0.12, 0.04, -0.055), (0.09, 0.08, 0.21), "l_ankle"),
    "r_foot": ((-0.12, 0.04, -0.055), (0.09, 0.08, 0.21), "r_ankle"),
}

# Block corners (CORNER_SIGNS order) annotated as contact vertices.
_CONTACT_CORNERS = {
    "l_foot": (0, 1, 4, 5),  # soles
    "r_foot": (0, 1, 4, 5),
    "pelvis": (1, 3, 5, 7),  # posterior
    "l_hand": (0, 1, 2, 3),  # palms face the body
    "r_hand": (4, 5, 6, 7),
}

_FACE_MARKERS = {
    "nose": (0.0, 1.72, -0.09),
    "l_eye": (0.03, 1.76, -0.085),
    "r_eye": (-0.03, 1.76, -0.085),
    "l_ear": (0.08, 1.74, 0.0),
    "r_ear": (-0.08, 1.74, 0.0),
}

COCO_KEYPOINTS = (
    "nose", "l_eye", "r_eye", "l_ear", "r_ear",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
)

MARKER_SIZE = 0.02


class _MeshBuilder:
    def __init__(self, joint_count: int):
        self.joint_count = joint_count
        self.vertices: list[np.ndarray] = []
        self.faces: list[np.ndarray] = []
        self.joints: list[int] = []
        self.count = 0

    def add(self, vertices: np.ndarray, faces: np.ndarray, joint: int) -> np.ndarray:
        indices = np.arange(self.count, self.count + len(vertices))
        self.vertices.append(vertices)
        self.faces.append(faces + self.count)
        self.joints.extend([joint] * len(vertices))
        self.count += len(vertices)
        return indices

    def add_block(self, center, size, joint: int) -> np.ndarray:
        block = box_mesh(BBox3D(centroid=center, size=size))
        return self.add(np.array(block.vertices), np.array(block.faces), joint)

    def add_prism(self, start: np.ndarray, end: np.ndarray, radius: float, segments: int, joint: int) -> np.ndarray:
        axis = end - start
        direction = axis / np.linalg.norm(axis)
        helper = np.array([0.0, 0.0, 1.0]) if abs(direction[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(direction, helper)
        u /= np.linalg.norm(u)
        w = np.cross(direction, u)
        square = np.array([u + w, -u + w, -u - w, u - w]) * radius
        rings = [start + axis * t + square for t in np.linspace(0.0, 1.0, segments + 1)]
        vertices = np.concatenate(rings)
        faces = []
        for i in range(segments):
            for k in range(4):
                a, b = 4 * i + k, 4 * i + (k + 1) % 4
                c, d = 4 * (i + 1) + (k + 1) % 4, 4 * (i + 1) + k
                faces += [[a, b, c], [a, c, d]]
        last = 4 * segments
        faces += [[0, 1, 2], [0, 2, 3], [last, last + 2, last + 1], [last, last + 3, last + 2]]
        return self.add(vertices, np.array(faces), joint)

    def weights(self) -> np.ndarray:
        weights = np.zeros((self.count, self.joint_count))
        weights[np.arange(self.count), self.joints] = 1.0
        return weights

    def mesh(self) -> TriMesh:
        return TriMesh(np.concatenate(self.vertices), np.concatenate(self.faces))


def build_default_template(segments_per_bone: int = DEFAULT_SEGMENTS_PER_BONE) -> BodyTemplate:
    """Blocky 16-joint humanoid with a COCO-17 keypoint map.

    Each bone is a square prism skinned rigidly to its parent joint;
    `segments_per_bone` controls how many rings each prism has.
    """
    if segments_per_bone < 1:
        raise ValueError(f"segments_per_bone must be >= 1, got {segments_per_bone}")
    names = [name for name, _, _ in _SKELETON]
    parents = np.array([parent for _, parent, _ in _SKELETON])
    positions = np.array([pos for _, _, pos in _SKELETON])
    offsets = positions.copy()
    offsets[1:] -= positions[parents[1:]]
    index = {name: j for j, name in enumerate(names)}

    builder = _MeshBuilder(len(names))
    for j in range(1, len(names)):
        p = parents[j]
        builder.add_prism(positions[p], positions[j], _CAPSULE_RADII[names[j]], segments_per_bone, p)

    contacts = []
    for block, (center, size, joint) in _BLOCKS.items():
        vertex_ids = builder.add_block(center, size, index[joint])
        contacts += [int(vertex_ids[c]) for c in _CONTACT_CORNERS.get(block, ())]

    marker_rows = []
    for keypoint in COCO_KEYPOINTS:
        if keypoint in _FACE_MARKERS:
            center, joint = _FACE_MARKERS[keypoint], index["head"]
        else:
            center, joint = positions[index[keypoint]], index[keypoint]
        marker_rows.append(builder.add_block(center, (MARKER_SIZE,) * 3, joint))

    regressor = np.zeros((len(COCO_KEYPOINTS), builder.count))
    for k, vertex_ids in enumerate(marker_rows):
        regressor[k, vertex_ids] = 1.0 / len(vertex_ids)

    radii = np.zeros(len(names))
    for name, radius in _CAPSULE_RADII.items():
        radii[index[name]] = radius

    return BodyTemplate(
        mesh=builder.mesh(),
        joint_names=tuple(names),
        parents=parents,
        offsets=offsets,
        skinning_weights=builder.weights(),
        joint_regressor=regressor,
        contact_vertex_indices=np.array(sorted(contacts)),
        keypoint_names=COCO_KEYPOINTS,
        keypoint_map=np.arange(len(COCO_KEYPOINTS)),
        capsule_radii=radii,
        bend_spec=tuple((index[name], axis, sign) for name, axis, sign in _BEND),
    )


@lru_cache(maxsize=4)
def default_template(segments_per_bone: int = DEFAULT_SEGMENTS_PER_BONE) -> BodyTemplate:
    """Cached bundled template."""
    return build_default_template(segments_per_bone)


class JointEntry(BaseModel):
    name: str
    parent: int
    offset: list[float] = Field(..., min_length=3, max_length=3)


class KeypointEntry(BaseModel):
    name: str
    regressor_row: int = Field(..., ge=0)


class TemplateSidecar(BaseModel):
    """Everything about a body template except its mesh."""

    schema_version: str = Field(TEMPLATE_SCHEMA, alias="schema")
    joints: list[JointEntry] = Field(..., min_length=1)
    skinning_weights: list[tuple[int, int, float]]
    regressor_rows: int = Field(..., ge=1)
    joint_regressor: list[tuple[int, int, float]]
    contact_vertex_indices: list[int]
    keypoints: list[KeypointEntry]
    capsule_radii: list[float]
    bend_spec: list[tuple[int, int, int]] = []

    model_config = {"populate_by_name": True}


def sidecar_path(obj_path: str | Path) -> Path:
    return Path(obj_path).with_suffix(".json")


def save_template(template: BodyTemplate, obj_path: str | Path) -> Path:
    """Write the template mesh as OBJ and its rig as a sidecar JSON next to it."""
    obj_path = Path(obj_path)
    save_obj(template.mesh, obj_path)
    weights = template.skinning_weights
    regressor = template.joint_regressor
    sidecar = TemplateSidecar(
        joints=[
            JointEntry(name=name, parent=int(template.parents[j]), offset=template.offsets[j].tolist())
            for j, name in enumerate(template.joint_names)
        ],
        skinning_weights=[(int(v), int(j), float(weights[v, j])) for v, j in zip(*np.nonzero(weights))],
        regressor_rows=len(regressor),
        joint_regressor=[(int(k), int(v), float(regressor[k, v])) for k, v in zip(*np.nonzero(regressor))],
        contact_vertex_indices=template.contact_vertex_indices.tolist(),
        keypoints=[
            KeypointEntry(name=name, regressor_row=int(row))
            for name, row in zip(template.keypoint_names, template.keypoint_map)
        ],
        capsule_radii=template.capsule_radii.tolist(),
        bend_spec=[tuple(entry) for entry in template.bend_spec],
    )
    path = sidecar_path(obj_path)
    try:
        path.write_text(json.dumps(sidecar.model_dump(by_alias=True), indent=2), encoding="utf-8")
    except OSError as e:
        raise IoError(str(path), e) from e
    logger.info(f"Saved body template to {obj_path} (+ {path.name})")
    return path


def load_template(obj_path: str | Path) -> BodyTemplate:
    """Load a template written by `save_template`."""
    obj_path = Path(obj_path)
    path = sidecar_path(obj_path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoError(str(path), e) from e
    except json.JSONDecodeError as e:
        raise SchemaError(str(path), f"invalid JSON ({e})") from e
    try:
        sidecar = TemplateSidecar.model_validate(raw)
    except ValidationError as e:
        error = e.errors()[0]
        raise SchemaError(".".join(str(p) for p in error["loc"]), error["msg"]) from e
    if sidecar.schema_version != TEMPLATE_SCHEMA:
        raise SchemaError("schema", f"expected '{TEMPLATE_SCHEMA}', got '{sidecar.schema_version}'")

    mesh = load_mesh(obj_path)
    n_vertices, n_joints = len(mesh.vertices), len(sidecar.joints)
    weights = np.zeros((n_vertices, n_joints))
    regressor = np.zeros((sidecar.regressor_rows, n_vertices))
    try:
        for v, j, w in sidecar.skinning_weights:
            weights[v, j] = w
        for k, v, w in sidecar.joint_regressor:
            regressor[k, v] = w
    except IndexError as e:
        raise SchemaError("skinning_weights/joint_regressor", f"index out of range ({e})") from e
    try:
        return BodyTemplate(
            mesh=mesh,
            joint_names=tuple(j.name for j in sidecar.joints),
            parents=[j.parent for j in sidecar.joints],
            offsets=[j.offset for j in sidecar.joints],
            skinning_weights=weights,
            joint_regressor=regressor,
            contact_vertex_indices=sidecar.contact_vertex_indices,
            keypoint_names=tuple(k.name for k in sidecar.keypoints),
            keypoint_map=[k.regressor_row for k in sidecar.keypoints],
            capsule_radii=sidecar.capsule_radii,
            bend_spec=tuple(tuple(e) for e in sidecar.bend_spec),
        )
    except ValueError as e:
        raise SchemaError(str(path), str(e)) from e
