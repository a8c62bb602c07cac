import numpy as np
import pytest
from numpy.testing import assert_allclose

from geometry import BBox3D
from mesh import TriMesh, build_sdf, load_mesh, normalize_unit_cube, place_mesh, save_obj, sdf_query, signed_distance, unsigned_distance
from mesh.bvh import BVH, squared_distances_to_triangles
from mesh.sdf import winding_numbers
from services.exceptions import DegenerateFace, EmptyMesh, NotWatertight, ParseError


class TestTriMesh:
    def test_degenerate_face_rejected(self):
        with pytest.raises(DegenerateFace) as exc:
            TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        assert exc.value.face_index == 0

    def test_face_index_out_of_range(self):
        with pytest.raises(ValueError):
            TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])

    def test_box_mesh_is_watertight(self, unit_cube):
        assert unit_cube.is_watertight
        assert unit_cube.face_areas.sum() == pytest.approx(6.0)

    def test_open_mesh_detected(self, unit_cube):
        opened = TriMesh(unit_cube.vertices, unit_cube.faces[:-1])
        assert not opened.is_watertight
        with pytest.raises(NotWatertight) as exc:
            opened.check_watertight()
        assert exc.value.face_count == 1

    def test_empty_mesh_watertight_check(self):
        with pytest.raises(EmptyMesh):
            TriMesh(np.zeros((0, 3)), np.zeros((0, 3))).check_watertight()

    def test_normalize_unit_cube(self, sphere):
        normalized = normalize_unit_cube(sphere.transformed(np.eye(3), np.array([3.0, -1.0, 2.0]), scale=4.0))
        lo, hi = normalized.vertices.min(axis=0), normalized.vertices.max(axis=0)
        assert_allclose((lo + hi) / 2, 0.0, atol=1e-12)
        assert (hi - lo).max() == pytest.approx(1.0)

    def test_place_mesh_fills_box(self, unit_cube_normalized):
        box = BBox3D(centroid=(1.0, 0.5, 4.0), size=(2.0, 1.0, 0.5), yaw=0.0)
        placed = place_mesh(unit_cube_normalized, box)
        lo, hi = box.aabb()
        assert_allclose(placed.vertices.min(axis=0), lo, atol=1e-12)
        assert_allclose(placed.vertices.max(axis=0), hi, atol=1e-12)


class TestDistances:
    def test_bvh_matches_brute_force(self, sphere, rng):
        points = rng.uniform(-2.0, 2.0, size=(300, 3))
        brute = squared_distances_to_triangles(points, sphere.triangles).min(axis=1)
        assert_allclose(BVH(sphere.triangles, leaf_size=4).squared_distances(points), brute, atol=1e-12)

    def test_bvh_matches_brute_force_on_random_soups(self, rng):
        trials = 0
        for _ in range(50):
            triangles = rng.normal(size=(int(rng.integers(1, 41)), 3, 3))
            points = rng.normal(scale=2.0, size=(20, 3))
            bvh = BVH(triangles, leaf_size=int(rng.integers(1, 9)))
            brute = squared_distances_to_triangles(points, triangles).min(axis=1)
            assert_allclose(bvh.squared_distances(points), brute, atol=1e-9)
            trials += len(points)
        assert trials >= 1000

    def test_distance_to_cube_face(self, unit_cube):
        assert unsigned_distance(np.array([2.0, 0.0, 0.0]), unit_cube) == pytest.approx(1.5)
        assert unsigned_distance(np.array([0.5, 0.2, -0.1]), unit_cube) == pytest.approx(0.0, abs=1e-12)

    def test_distance_to_cube_corner(self, unit_cube):
        assert unsigned_distance(np.array([1.5, 1.5, 1.5]), unit_cube) == pytest.approx(np.sqrt(3.0))

    def test_signed_distance_sign(self, unit_cube):
        assert signed_distance(np.array([0.0, 0.0, 0.0]), unit_cube) == pytest.approx(-0.5)
        assert signed_distance(np.array([0.0, 0.0, 0.1]), unit_cube) == pytest.approx(-0.4)
        assert signed_distance(np.array([0.0, 0.9, 0.0]), unit_cube) == pytest.approx(0.4)

    def test_winding_number(self, sphere):
        w = winding_numbers(np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), sphere)
        assert_allclose(w, [1.0, 0.0], atol=1e-9)

    def test_signed_distance_requires_watertight(self, unit_cube):
        opened = TriMesh(unit_cube.vertices, unit_cube.faces[:-2])
        with pytest.raises(NotWatertight):
            signed_distance(np.zeros(3), opened)


class TestSdfGrid:
    def test_grid_values_match_exact_distance(self, unit_cube):
        grid = build_sdf([unit_cube], BBox3D(centroid=(0, 0, 0), size=(2, 2, 2)), resolution=8)
        centers = grid.cell_centers()
        exact = np.array([signed_distance(c, unit_cube) for c in centers[::37]])
        assert_allclose(grid.values.reshape(-1)[::37], exact, atol=1e-12)

    def test_query_inside_and_outside(self, unit_cube):
        grid = build_sdf([unit_cube], BBox3D(centroid=(0, 0, 0), size=(2, 2, 2)), resolution=16)
        inside, _ = sdf_query(grid, np.zeros(3))
        assert inside < 0.0
        outside, _ = sdf_query(grid, np.array([0.0, 0.8, 0.0]))
        assert outside == pytest.approx(0.3, abs=grid.diagonal)

    def test_far_points_read_positive(self, unit_cube):
        grid = build_sdf([unit_cube], BBox3D(centroid=(0, 0, 0), size=(2, 2, 2)), resolution=8)
        value, grad = sdf_query(grid, np.array([10.0, 0.0, 0.0]))
        assert value > 8.0
        assert grad[0] > 0.0

    def test_outside_distance_is_measured_to_grid_bounds(self, unit_cube):
        # Cells of 0.25 over [-1, 1]^3; the last cell center on +x sits at 0.875, 0.375 from the cube.
        grid = build_sdf([unit_cube], BBox3D(centroid=(0, 0, 0), size=(2, 2, 2)), resolution=8)
        lo, hi = grid.bounds
        assert_allclose(lo, [-1.0, -1.0, -1.0])
        assert_allclose(hi, [1.0, 1.0, 1.0])
        shell, _ = sdf_query(grid, np.array([0.95, 0.0, 0.0]))
        assert shell == pytest.approx(0.375, abs=1e-9)
        value, grad = sdf_query(grid, np.array([3.0, 0.0, 0.0]))
        assert value == pytest.approx(0.375 + 2.0, abs=1e-9)
        assert_allclose(grad, [1.0, 0.0, 0.0], atol=1e-9)

    def test_gradient_matches_finite_difference(self, unit_cube):
        grid = build_sdf([unit_cube], BBox3D(centroid=(0, 0, 0), size=(2, 2, 2)), resolution=12)
        p = np.array([0.13, 0.61, -0.27])
        _, grad = sdf_query(grid, p)
        h = 1e-6
        fd = [(sdf_query(grid, p + h * e)[0] - sdf_query(grid, p - h * e)[0]) / (2 * h) for e in np.eye(3)]
        assert_allclose(grad, fd, atol=1e-5)

    def test_parallel_build_matches_serial(self, sphere):
        box = BBox3D(centroid=(0, 0, 0), size=(3, 3, 3))
        serial = build_sdf([sphere], box, resolution=6)
        threaded = build_sdf([sphere], box, resolution=6, workers=3)
        assert_allclose(threaded.values, serial.values)

    def test_empty_union_is_inf(self):
        grid = build_sdf([], BBox3D(centroid=(0, 0, 0), size=(1, 1, 1)), resolution=4)
        assert grid.is_empty
        assert sdf_query(grid, np.zeros(3))[0] == np.inf


class TestMeshIo:
    def test_obj_roundtrip(self, sphere, tmp_path):
        path = save_obj(sphere, tmp_path / "sphere.obj")
        loaded = load_mesh(path)
        assert_allclose(loaded.vertices, sphere.vertices, atol=1e-12)
        assert np.array_equal(loaded.faces, sphere.faces)

    def test_obj_quads_are_triangulated(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        assert len(load_mesh(path).faces) == 2

    def test_ascii_ply(self, tmp_path):
        path = tmp_path / "tri.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
        )
        mesh = load_mesh(path)
        assert mesh.vertices.shape == (3, 3)
        assert mesh.faces.tolist() == [[0, 1, 2]]

    def test_obj_zero_index(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
        with pytest.raises(ParseError) as exc:
            load_mesh(path)
        assert exc.value.line == 4

    def test_ply_out_of_range_face_reports_its_line(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n"
        )
        with pytest.raises(ParseError) as exc:
            load_mesh(path)
        assert exc.value.line == 13
        assert "outside 0..2" in exc.value.detail

    def test_binary_ply_rejected(self, tmp_path):
        path = tmp_path / "bin.ply"
        path.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
        with pytest.raises(ParseError):
            load_mesh(path)

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "mesh.stl"
        path.write_text("solid x\n")
        with pytest.raises(ParseError):
            load_mesh(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_mesh(tmp_path / "absent.obj")
