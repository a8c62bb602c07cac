"""Triangle meshes, exact distance queries and signed-distance grids."""
from mesh.core import TriMesh, box_mesh, normalize_unit_cube, place_mesh
from mesh.io import load_mesh, save_obj
from mesh.sdf import SdfGrid, build_sdf, sdf_query, signed_distance, unsigned_distance

__all__ = [
    "TriMesh",
    "box_mesh",
    "normalize_unit_cube",
    "place_mesh",
    "load_mesh",
    "save_obj",
    "SdfGrid",
    "build_sdf",
    "sdf_query",
    "signed_distance",
    "unsigned_distance",
]
