"""OBJ / ASCII-PLY mesh import and OBJ export."""
import logging
from pathlib import Path

import numpy as np
import trimesh

from mesh.core import TriMesh
from services.exceptions import DegenerateFace, IoError, ParseError

logger = logging.getLogger(__name__)

OBJ_DIGITS = 15


def _triangulate(polygon: list[int]) -> list[list[int]]:
    return [[polygon[0], polygon[i], polygon[i + 1]] for i in range(1, len(polygon) - 1)]


def _parse_obj(path: Path, text: str) -> tuple[np.ndarray, np.ndarray]:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    face_lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        keyword = tokens[0]
        if keyword == "v":
            if len(tokens) < 4:
                raise ParseError(str(path), "vertex needs three coordinates", lineno)
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError as e:
                raise ParseError(str(path), f"bad vertex coordinate ({e})", lineno) from e
        elif keyword == "f":
            if len(tokens) < 4:
                raise ParseError(str(path), "face needs at least three vertices", lineno)
            polygon = []
            for token in tokens[1:]:
                try:
                    index = int(token.split("/")[0])
                except ValueError as e:
                    raise ParseError(str(path), f"bad face index '{token}'", lineno) from e
                if index == 0:
                    raise ParseError(str(path), "face index 0 (OBJ indices are 1-based)", lineno)
                # Negative indices count back from the most recent vertex.
                polygon.append(index - 1 if index > 0 else len(vertices) + index)
            for tri in _triangulate(polygon):
                faces.append(tri)
                face_lines.append(lineno)
        # Normals, texture coordinates, groups and materials are ignored.
    vertex_count = len(vertices)
    for tri, lineno in zip(faces, face_lines):
        if min(tri) < 0 or max(tri) >= vertex_count:
            raise ParseError(
                str(path), f"face references a vertex outside 1..{vertex_count}", lineno
            )
    return np.array(vertices, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_ply(path: Path, text: str) -> tuple[np.ndarray, np.ndarray]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(str(path), "missing 'ply' magic", 1)
    elements: list[tuple[str, int, list[str]]] = []
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError(str(path), f"only ASCII PLY is supported, got '{raw.strip()}'", lineno)
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError(str(path), "malformed element line", lineno)
            try:
                elements.append((tokens[1], int(tokens[2]), []))
            except ValueError as e:
                raise ParseError(str(path), "element count is not an integer", lineno) from e
        elif tokens[0] == "property":
            if not elements:
                raise ParseError(str(path), "property before any element", lineno)
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = lineno
            break
        else:
            raise ParseError(str(path), f"unknown header keyword '{tokens[0]}'", lineno)
    if body_start is None:
        raise ParseError(str(path), "missing end_header")

    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    face_lines: list[int] = []
    cursor = body_start
    for name, count, props in elements:
        for _ in range(count):
            if cursor >= len(lines):
                raise ParseError(str(path), f"unexpected end of file in element '{name}'")
            lineno = cursor + 1
            tokens = lines[cursor].split()
            cursor += 1
            try:
                if name == "vertex":
                    columns = {prop: float(tok) for prop, tok in zip(props, tokens)}
                    vertices.append([columns["x"], columns["y"], columns["z"]])
                elif name == "face":
                    n = int(tokens[0])
                    polygon = [int(t) for t in tokens[1:1 + n]]
                    if n < 3 or len(polygon) != n:
                        raise ParseError(str(path), "face needs at least three vertices", lineno)
                    for tri in _triangulate(polygon):
                        faces.append(tri)
                        face_lines.append(lineno)
            except (KeyError, ValueError, IndexError) as e:
                raise ParseError(str(path), f"bad {name} record ({e})", lineno) from e
    for tri, lineno in zip(faces, face_lines):
        if min(tri) < 0 or max(tri) >= len(vertices):
            raise ParseError(str(path), f"face references a vertex outside 0..{len(vertices) - 1}", lineno)
    return np.array(vertices, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def load_mesh(path: str | Path) -> TriMesh:
    """Load an OBJ or ASCII PLY triangle mesh.

    Raises:
        ParseError: malformed file or unsupported format.
        DegenerateFace: a face with (near) zero area.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(str(path), "file is not UTF-8 text (binary meshes are not supported)") from e
    except OSError as e:
        raise ParseError(str(path), f"cannot read file ({e})") from e
    suffix = path.suffix.lower()
    if suffix == ".obj":
        vertices, faces = _parse_obj(path, text)
    elif suffix == ".ply":
        vertices, faces = _parse_ply(path, text)
    else:
        raise ParseError(str(path), f"unsupported mesh format '{suffix}'")
    mesh = TriMesh(vertices, faces)
    logger.debug(f"Loaded {path}: {len(vertices)} vertices, {len(faces)} faces")
    return mesh


def to_trimesh(mesh: TriMesh) -> trimesh.Trimesh:
    return trimesh.Trimesh(vertices=np.array(mesh.vertices), faces=np.array(mesh.faces), process=False)


def from_trimesh(tm: trimesh.Trimesh) -> TriMesh:
    return TriMesh(np.asarray(tm.vertices, dtype=float), np.asarray(tm.faces, dtype=np.int64))


def save_obj(mesh: TriMesh, path: str | Path) -> Path:
    """Write a mesh as OBJ with enough digits to round-trip to ~1e-15."""
    path = Path(path)
    text = trimesh.exchange.obj.export_obj(
        to_trimesh(mesh),
        include_normals=False,
        include_color=False,
        include_texture=False,
        digits=OBJ_DIGITS,
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(str(path), e) from e
    return path


__all__ = ["load_mesh", "save_obj", "to_trimesh", "from_trimesh", "DegenerateFace"]
