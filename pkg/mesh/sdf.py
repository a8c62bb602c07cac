"""Signed distances to watertight meshes and voxelized signed-distance grids."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from geometry.boxes import BBox3D
from mesh.core import TriMesh
from services.exceptions import EmptyMesh

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 32
# Upper bound on point x triangle pairs evaluated at once by the winding number.
_WINDING_BLOCK = 2_000_000


def unsigned_distances(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    if mesh.is_empty:
        raise EmptyMesh("unsigned_distance")
    return mesh.bvh.distances(points)


def unsigned_distance(p: np.ndarray, mesh: TriMesh) -> float:
    """Exact distance from p to the closest point on the mesh surface."""
    return float(unsigned_distances(np.asarray(p, dtype=float).reshape(1, 3), mesh)[0])


def winding_numbers(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Generalized winding number of each point w.r.t. the mesh (solid-angle sum / 4pi)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    tri = mesh.triangles
    out = np.empty(len(points))
    block = max(1, _WINDING_BLOCK // max(1, len(tri)))
    for start in range(0, len(points), block):
        p = points[start:start + block, None, None, :]
        rel = tri[None] - p
        a, b, c = rel[:, :, 0], rel[:, :, 1], rel[:, :, 2]
        la = np.linalg.norm(a, axis=-1)
        lb = np.linalg.norm(b, axis=-1)
        lc = np.linalg.norm(c, axis=-1)
        det = np.einsum("...i,...i->...", a, np.cross(b, c))
        denom = (
            la * lb * lc
            + np.einsum("...i,...i->...", a, b) * lc
            + np.einsum("...i,...i->...", b, c) * la
            + np.einsum("...i,...i->...", c, a) * lb
        )
        out[start:start + block] = 2.0 * np.arctan2(det, denom).sum(axis=1)
    return out / (4.0 * np.pi)


def signed_distances(points: np.ndarray, meshes: Sequence[TriMesh]) -> np.ndarray:
    """Signed distance to the union of watertight meshes; negative inside any of them."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if not meshes:
        return np.full(len(points), np.inf)
    for mesh in meshes:
        mesh.check_watertight()
    distance = np.full(len(points), np.inf)
    inside = np.zeros(len(points), dtype=bool)
    for mesh in meshes:
        distance = np.minimum(distance, mesh.bvh.distances(points))
        inside |= np.abs(winding_numbers(points, mesh)) >= 0.5
    return np.where(inside, -distance, distance)


def signed_distance(p: np.ndarray, mesh: TriMesh) -> float:
    """Signed distance from p to a watertight mesh (negative inside)."""
    return float(signed_distances(np.asarray(p, dtype=float).reshape(1, 3), [mesh])[0])


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Signed distances sampled at cell centers of an axis-aligned grid.

    `origin` is the center of cell (0, 0, 0); cell (i, j, k) is centered at
    origin + (i, j, k) * cell_size. `values` has shape `dims`. A grid with no
    source geometry stores +inf everywhere.
    """

    origin: np.ndarray
    cell_size: np.ndarray
    dims: tuple[int, int, int]
    values: np.ndarray

    def __post_init__(self):
        origin = np.array(self.origin, dtype=float).reshape(3)
        cell = np.array(self.cell_size, dtype=float).reshape(3)
        dims = tuple(int(d) for d in self.dims)
        values = np.array(self.values, dtype=float)
        if np.any(cell <= 0.0):
            raise ValueError(f"cell_size must be positive, got {cell.tolist()}")
        if len(dims) != 3 or min(dims) < 2:
            raise ValueError(f"dims must be three integers >= 2, got {dims}")
        if values.size != int(np.prod(dims)):
            raise ValueError(f"values has {values.size} entries, expected {int(np.prod(dims))}")
        values = values.reshape(dims)
        for array in (origin, cell, values):
            array.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cell_size", cell)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)

    @cached_property
    def is_empty(self) -> bool:
        return bool(np.all(np.isinf(self.values)))

    @property
    def upper(self) -> np.ndarray:
        """Center of the last cell."""
        return self.origin + (np.array(self.dims) - 1) * self.cell_size

    def cell_centers(self) -> np.ndarray:
        return grid_cell_centers(self.origin, self.cell_size, self.dims)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Corners of the axis-aligned box covered by the cells."""
        half = self.cell_size / 2.0
        return self.origin - half, self.upper + half

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.cell_size))


def grid_cell_centers(origin: np.ndarray, cell_size: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """(prod(dims), 3) cell centers in C order."""
    axes = [origin[a] + np.arange(dims[a]) * cell_size[a] for a in range(3)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _grid_frame(box: BBox3D, resolution: int) -> tuple[np.ndarray, np.ndarray, tuple[int, int, int]]:
    lo, hi = box.aabb()
    cell = (hi - lo) / resolution
    return lo + cell / 2.0, cell, (resolution, resolution, resolution)


def build_sdf(mesh_union: Sequence[TriMesh], box: BBox3D, resolution: int = DEFAULT_RESOLUTION,
              workers: int = 1) -> SdfGrid:
    """Voxelize the axis-aligned bounds of `box` and store the union signed distance per cell center."""
    if resolution < 2:
        raise ValueError(f"SDF resolution must be >= 2, got {resolution}")
    origin, cell, dims = _grid_frame(box, resolution)
    if not mesh_union:
        return SdfGrid(origin, cell, dims, np.full(dims, np.inf))
    for mesh in mesh_union:
        mesh.check_watertight()
    centers = grid_cell_centers(origin, cell, dims)
    if workers > 1:
        chunks = np.array_split(centers, workers)
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(lambda pts: signed_distances(pts, mesh_union), chunks))
        values = np.concatenate(parts)
    else:
        values = signed_distances(centers, mesh_union)
    logger.debug(f"Built {dims} SDF over {len(mesh_union)} mesh(es)")
    return SdfGrid(origin, cell, dims, values)


def sdf_query_many(grid: SdfGrid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear values and analytic gradients at (N, 3) points.

    Interpolation clamps to the cell-center box. Points outside the grid's
    bounds also get their distance to those bounds added, so far-away points
    always read positive.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(points)
    if grid.is_empty:
        return np.full(n, np.inf), np.zeros((n, 3))
    dims = np.array(grid.dims)
    u = (points - grid.origin) / grid.cell_size
    uc = np.clip(u, 0.0, dims - 1)
    i0 = np.clip(np.floor(uc).astype(np.int64), 0, dims - 2)
    t = uc - i0
    v = grid.values
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = x0 + 1, y0 + 1, z0 + 1
    c000 = v[x0, y0, z0]
    c100 = v[x1, y0, z0]
    c010 = v[x0, y1, z0]
    c110 = v[x1, y1, z0]
    c001 = v[x0, y0, z1]
    c101 = v[x1, y0, z1]
    c011 = v[x0, y1, z1]
    c111 = v[x1, y1, z1]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    sx, sy, sz = 1.0 - tx, 1.0 - ty, 1.0 - tz

    values = (
        sx * sy * sz * c000 + tx * sy * sz * c100 + sx * ty * sz * c010 + tx * ty * sz * c110
        + sx * sy * tz * c001 + tx * sy * tz * c101 + sx * ty * tz * c011 + tx * ty * tz * c111
    )
    d_tx = sy * sz * (c100 - c000) + ty * sz * (c110 - c010) + sy * tz * (c101 - c001) + ty * tz * (c111 - c011)
    d_ty = sx * sz * (c010 - c000) + tx * sz * (c110 - c100) + sx * tz * (c011 - c001) + tx * tz * (c111 - c101)
    d_tz = sx * sy * (c001 - c000) + tx * sy * (c101 - c100) + sx * ty * (c011 - c010) + tx * ty * (c111 - c110)
    grads = np.stack([d_tx, d_ty, d_tz], axis=1) / grid.cell_size
    grads[u != uc] = 0.0

    lo, hi = grid.bounds
    offset = points - np.clip(points, lo, hi)
    outside = np.linalg.norm(offset, axis=1)
    far = outside > 0.0
    values = values + outside
    grads[far] += offset[far] / outside[far, None]
    return values, grads


def sdf_query(grid: SdfGrid, p: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient of the trilinear SDF interpolant at one point."""
    values, grads = sdf_query_many(grid, np.asarray(p, dtype=float).reshape(1, 3))
    return float(values[0]), grads[0]
