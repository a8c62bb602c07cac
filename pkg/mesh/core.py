"""Triangle mesh type and rigid placement helpers."""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from geometry.boxes import BBox3D
from services.exceptions import DegenerateFace, EmptyMesh, NotWatertight

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangle mesh. Vertices in meters, faces index into vertices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ValueError(
                f"Face indices must lie in [0, {len(vertices)}), got range "
                f"[{faces.min()}, {faces.max()}]"
            )
        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)
        if faces.size:
            areas = self.face_areas
            bad = np.flatnonzero(areas <= DEGENERATE_AREA)
            if bad.size:
                raise DegenerateFace(int(bad[0]), float(areas[bad[0]]))

    @classmethod
    def trusted(cls, vertices: np.ndarray, faces: np.ndarray) -> "TriMesh":
        """Build a mesh whose topology is already known to be valid (e.g. a rigid transform of one)."""
        mesh = object.__new__(cls)
        vertices = np.ascontiguousarray(vertices, dtype=float)
        vertices.setflags(write=False)
        object.__setattr__(mesh, "vertices", vertices)
        object.__setattr__(mesh, "faces", faces)
        return mesh

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0 or len(self.faces) == 0

    @cached_property
    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates per face."""
        return self.vertices[self.faces]

    @cached_property
    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    @cached_property
    def bvh(self):
        from mesh.bvh import BVH

        if self.is_empty:
            raise EmptyMesh("BVH construction")
        return BVH(self.triangles)

    @cached_property
    def edge_violation(self) -> tuple[tuple[int, int], int] | None:
        """First undirected edge not shared by exactly two faces, with its face count."""
        if not len(self.faces):
            return None
        edges = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        unique, counts = np.unique(edges, axis=0, return_counts=True)
        bad = np.flatnonzero(counts != 2)
        if not bad.size:
            return None
        return (int(unique[bad[0], 0]), int(unique[bad[0], 1])), int(counts[bad[0]])

    @property
    def is_watertight(self) -> bool:
        return len(self.faces) > 0 and self.edge_violation is None

    def check_watertight(self) -> None:
        if not len(self.faces):
            raise EmptyMesh("watertightness check")
        violation = self.edge_violation
        if violation is not None:
            raise NotWatertight(*violation)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray,
                    scale: np.ndarray | None = None) -> "TriMesh":
        vertices = self.vertices if scale is None else self.vertices * scale
        return TriMesh.trusted(vertices @ np.asarray(rotation).T + translation, self.faces)


def normalize_unit_cube(mesh: TriMesh) -> TriMesh:
    """Uniformly scale and center a mesh so its longest axis spans exactly [-0.5, 0.5]."""
    if len(mesh.vertices) == 0:
        raise EmptyMesh("normalize_unit_cube")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise EmptyMesh("normalize_unit_cube (zero extent)")
    center = (lo + hi) / 2.0
    return TriMesh.trusted((mesh.vertices - center) / extent, mesh.faces)


def place_mesh(mesh: TriMesh, box: BBox3D) -> TriMesh:
    """Scale a unit-cube mesh per axis by the box size, rotate by its yaw and move it to the centroid."""
    return mesh.transformed(box.rotation, box.centroid, scale=box.size)


def box_mesh(box: BBox3D) -> TriMesh:
    """Closed 12-triangle mesh of a box, outward-facing."""
    from geometry.boxes import box_corners

    # Corner indices follow CORNER_SIGNS: bit 2 -> +x, bit 1 -> +y, bit 0 -> +z.
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ]
    )
    return TriMesh(box_corners(box), faces)
