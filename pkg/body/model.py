"""Articulated body: template, parameters, forward kinematics and linear blend skinning."""
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from mesh.core import TriMesh
from services.exceptions import BadJointIndex

logger = logging.getLogger(__name__)

SHAPE_SCALE_MIN = 0.5
SHAPE_SCALE_MAX = 2.0


def _readonly(values, dtype=float, shape=None) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    if shape is not None:
        array = array.reshape(shape)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BodyTemplate:
    """Neutral-pose body mesh with its skeleton and regressors.

    `offsets[j]` is the rest position of joint j relative to its parent (the
    root offset is its absolute rest position). Joints are stored parents
    first. `keypoint_map[k]` is the regressor row reported in 2D keypoint
    slot k. `bend_spec` lists (joint, axis, sign) triples; `capsule_radii[j]`
    is the radius of the bone ending at joint j (unused for the root).
    """

    mesh: TriMesh
    joint_names: tuple[str, ...]
    parents: np.ndarray
    offsets: np.ndarray
    skinning_weights: np.ndarray
    joint_regressor: np.ndarray
    contact_vertex_indices: np.ndarray
    keypoint_names: tuple[str, ...]
    keypoint_map: np.ndarray
    capsule_radii: np.ndarray
    bend_spec: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        n_joints = len(self.joint_names)
        n_vertices = len(self.mesh.vertices)
        parents = _readonly(self.parents, dtype=np.int64, shape=(n_joints,))
        offsets = _readonly(self.offsets, shape=(n_joints, 3))
        weights = _readonly(self.skinning_weights, shape=(n_vertices, n_joints))
        regressor = _readonly(self.joint_regressor)
        contacts = _readonly(self.contact_vertex_indices, dtype=np.int64).reshape(-1)
        keypoint_map = _readonly(self.keypoint_map, dtype=np.int64).reshape(-1)
        radii = _readonly(self.capsule_radii, shape=(n_joints,))

        roots = np.flatnonzero(parents < 0)
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("Skeleton must have exactly one root, stored first")
        for j in range(1, n_joints):
            # Parents-first ordering rules out cycles.
            if not 0 <= parents[j] < j:
                raise BadJointIndex(int(parents[j]), n_joints)
        if np.any(weights < 0.0) or not np.allclose(weights.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("Skinning weight rows must be non-negative and sum to 1")
        if regressor.ndim != 2 or regressor.shape[1] != n_vertices:
            raise ValueError(f"Joint regressor must have {n_vertices} columns, got shape {regressor.shape}")
        if contacts.size and (contacts.min() < 0 or contacts.max() >= n_vertices):
            raise ValueError(f"Contact vertex indices must lie in [0, {n_vertices})")
        if keypoint_map.size and (keypoint_map.min() < 0 or keypoint_map.max() >= len(regressor)):
            raise ValueError("Keypoint map refers to a missing regressor row")
        if len(self.keypoint_names) != len(keypoint_map):
            raise ValueError("Keypoint names and keypoint map differ in length")
        for joint, axis, sign in self.bend_spec:
            if not 0 <= joint < n_joints:
                raise BadJointIndex(joint, n_joints)
            if axis not in (0, 1, 2) or sign not in (-1, 1):
                raise ValueError(f"Bad bend spec entry {(joint, axis, sign)}")

        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "skinning_weights", weights)
        object.__setattr__(self, "joint_regressor", regressor)
        object.__setattr__(self, "contact_vertex_indices", contacts)
        object.__setattr__(self, "keypoint_names", tuple(self.keypoint_names))
        object.__setattr__(self, "keypoint_map", keypoint_map)
        object.__setattr__(self, "capsule_radii", radii)
        object.__setattr__(self, "bend_spec", tuple(tuple(int(v) for v in e) for e in self.bend_spec))

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def rest_joints(self) -> np.ndarray:
        """Absolute rest positions of all joints."""
        positions = np.zeros((self.joint_count, 3))
        positions[0] = self.offsets[0]
        for j in range(1, self.joint_count):
            positions[j] = positions[self.parents[j]] + self.offsets[j]
        return positions

    @property
    def bones(self) -> list[tuple[int, int]]:
        """(parent, child) joint pairs, one per non-root joint."""
        return [(int(self.parents[j]), j) for j in range(1, self.joint_count)]

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)


@dataclass(frozen=True, eq=False)
class BodyParams:
    """Translation, global axis-angle rotation, per-joint axis-angle pose and per-axis shape scale."""

    translation: np.ndarray
    global_rotation: np.ndarray
    pose: np.ndarray
    shape_scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        translation = _readonly(self.translation, shape=(3,))
        global_rotation = _readonly(self.global_rotation, shape=(3,))
        pose = np.array(self.pose, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pose)):
            raise ValueError("Pose angles must be finite")
        pose.setflags(write=False)
        scale = np.array(self.shape_scale, dtype=float).reshape(3)
        clamped = np.clip(scale, SHAPE_SCALE_MIN, SHAPE_SCALE_MAX)
        if not np.array_equal(clamped, scale):
            logger.warning(f"Clamped shape scale {scale.tolist()} to {clamped.tolist()}")
        clamped.setflags(write=False)
        object.__setattr__(self, "translation", translation)
        object.__setattr__(self, "global_rotation", global_rotation)
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "shape_scale", clamped)

    @classmethod
    def neutral(cls, joint_count: int, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "BodyParams":
        return cls(translation=translation, global_rotation=np.zeros(3), pose=np.zeros((joint_count, 3)))

    def replace(self, **changes) -> "BodyParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "translation": self.translation.tolist(),
            "global_rotation": self.global_rotation.tolist(),
            "pose": self.pose.tolist(),
            "shape_scale": self.shape_scale.tolist(),
        }


def axis_angle_to_matrix(rotvec: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for one (3,) or many (N, 3) axis-angle vectors."""
    rotvec = np.array(rotvec, dtype=float)
    return Rotation.from_rotvec(rotvec).as_matrix()


def _check_pose(template: BodyTemplate, params: BodyParams) -> None:
    if len(params.pose) != template.joint_count:
        raise ValueError(f"Pose has {len(params.pose)} joints, template has {template.joint_count}")


def skeleton_transforms(template: BodyTemplate, params: BodyParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint world rotations and posed joint positions before the global transform.

    Shape scaling is applied to the rest skeleton first.
    """
    _check_pose(template, params)
    rest = template.rest_joints * params.shape_scale
    local = axis_angle_to_matrix(params.pose)
    rotations = np.empty((template.joint_count, 3, 3))
    positions = np.empty((template.joint_count, 3))
    rotations[0] = local[0]
    positions[0] = rest[0]
    for j in range(1, template.joint_count):
        p = template.parents[j]
        rotations[j] = rotations[p] @ local[j]
        positions[j] = positions[p] + rotations[p] @ (rest[j] - rest[p])
    return rotations, positions


def _apply_global(points: np.ndarray, params: BodyParams) -> np.ndarray:
    if np.any(params.global_rotation):
        points = points @ axis_angle_to_matrix(params.global_rotation).T
    return points + params.translation


def body_forward(template: BodyTemplate, params: BodyParams) -> TriMesh:
    """Posed body mesh: scale, skin through the joint tree, rotate globally, then translate."""
    rotations, positions = skeleton_transforms(template, params)
    rest = template.rest_joints * params.shape_scale
    vertices = template.mesh.vertices * params.shape_scale
    if np.any(params.pose):
        # Skinning transform of joint j: v -> R_j (v - rest_j) + p_j.
        offsets = positions - np.einsum("jab,jb->ja", rotations, rest)
        blended_rot = np.einsum("vj,jab->vab", template.skinning_weights, rotations)
        blended_off = template.skinning_weights @ offsets
        vertices = np.einsum("vab,vb->va", blended_rot, vertices) + blended_off
    return TriMesh.trusted(_apply_global(vertices, params), template.mesh.faces)


def body_joints3d(template: BodyTemplate, params: BodyParams, mesh: TriMesh | None = None) -> np.ndarray:
    """Regressed 3D joints (K, 3) of the posed body."""
    if mesh is None:
        mesh = body_forward(template, params)
    return template.joint_regressor @ mesh.vertices


def posed_skeleton(template: BodyTemplate, params: BodyParams) -> np.ndarray:
    """World positions of the skeleton joints (J, 3)."""
    _, positions = skeleton_transforms(template, params)
    return _apply_global(positions, params)
