"""Immutable scene + body state the loss terms are evaluated on."""
import logging
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy.spatial import cKDTree

from body.model import BodyParams, BodyTemplate, body_forward
from geometry.boxes import BBox3D, Rect2D, RoomLayout
from geometry.camera import CameraPose, Intrinsics
from mesh.core import TriMesh, place_mesh
from mesh.sdf import SdfGrid, build_sdf

logger = logging.getLogger(__name__)

# Padding of the scene-union grid around all objects, relative to its extent.
SCENE_GRID_PADDING = 0.1


@dataclass(frozen=True, eq=False)
class ObjectState:
    """One scene object: its box, unit-cube mesh and 2D detection."""

    box: BBox3D
    mesh: TriMesh
    detection: Rect2D
    label: str = "object"
    # File the mesh was loaded from, if any.
    mesh_path: str | None = None

    @cached_property
    def placed(self) -> TriMesh:
        return place_mesh(self.mesh, self.box)

    def with_box(self, box: BBox3D) -> "ObjectState":
        return replace(self, box=box)


@dataclass(frozen=True, eq=False)
class BodyState:
    template: BodyTemplate
    params: BodyParams
    # None means the built-in default template.
    template_path: str | None = None

    @cached_property
    def mesh(self) -> TriMesh:
        return body_forward(self.template, self.params)

    def with_params(self, params: BodyParams) -> "BodyState":
        return BodyState(self.template, params, self.template_path)


@dataclass(frozen=True, eq=False)
class SceneState:
    """Camera, layout, objects, body and 2D evidence, plus the frozen SDF grids.

    `scene_sdf_per_object[i]` holds the union of every object mesh except i,
    sampled over object i's bounds; `scene_sdf` holds the union of all of them
    and backs the body penetration term. Grids are only rebuilt by
    `rebuild_sdfs`, so they stay fixed while parameters are perturbed.
    """

    camera: CameraPose
    intrinsics: Intrinsics
    layout: RoomLayout
    objects: tuple[ObjectState, ...]
    scene_sdf_per_object: tuple[SdfGrid, ...] = ()
    scene_sdf: SdfGrid | None = None
    body: BodyState | None = None
    keypoints_2d: np.ndarray | None = None
    sdf_resolution: int = 32

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "scene_sdf_per_object", tuple(self.scene_sdf_per_object))
        if self.scene_sdf_per_object and len(self.scene_sdf_per_object) != len(self.objects):
            raise ValueError(
                f"{len(self.scene_sdf_per_object)} SDF grids for {len(self.objects)} objects"
            )
        if self.keypoints_2d is not None:
            keypoints = np.array(self.keypoints_2d, dtype=float).reshape(-1, 3)
            keypoints.setflags(write=False)
            object.__setattr__(self, "keypoints_2d", keypoints)

    @property
    def has_sdfs(self) -> bool:
        return len(self.scene_sdf_per_object) == len(self.objects) and self.scene_sdf is not None

    @property
    def floor_height(self) -> float:
        return self.layout.floor_height

    def replace(self, **changes) -> "SceneState":
        return replace(self, **changes)

    def rebuild_sdfs(self, workers: int = 1) -> "SceneState":
        """Return a copy whose grids match the current object boxes."""
        per_object, union = build_scene_sdfs(self.objects, self.sdf_resolution, workers)
        return replace(self, scene_sdf_per_object=per_object, scene_sdf=union)


def scene_grid_box(objects: tuple[ObjectState, ...]) -> BBox3D:
    """Axis-aligned box around every object, padded on each side."""
    bounds = [obj.box.aabb() for obj in objects]
    lo = np.min([b[0] for b in bounds], axis=0)
    hi = np.max([b[1] for b in bounds], axis=0)
    pad = SCENE_GRID_PADDING * (hi - lo)
    return BBox3D(centroid=(lo + hi) / 2.0, size=(hi - lo) + 2.0 * pad)


def build_scene_sdfs(objects: tuple[ObjectState, ...], resolution: int,
                     workers: int = 1) -> tuple[tuple[SdfGrid, ...], SdfGrid | None]:
    """Leave-one-out grids per object and the all-object grid (None without objects)."""
    if not objects:
        return (), None
    placed = [obj.placed for obj in objects]
    per_object = tuple(
        build_sdf(placed[:i] + placed[i + 1:], obj.box, resolution, workers)
        for i, obj in enumerate(objects)
    )
    union = build_sdf(placed, scene_grid_box(objects), resolution, workers)
    logger.debug(f"Built {len(per_object) + 1} SDF grids at resolution {resolution}")
    return per_object, union


@lru_cache(maxsize=32)
def scene_vertex_tree(objects: tuple[ObjectState, ...]) -> cKDTree:
    """KD-tree over the vertices of every placed object mesh."""
    return cKDTree(np.concatenate([obj.placed.vertices for obj in objects]))
