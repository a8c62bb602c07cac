import numpy as np
import pytest
import trimesh

from geometry import BBox3D
from mesh.core import box_mesh, normalize_unit_cube
from mesh.io import from_trimesh


@pytest.fixture
def unit_cube():
    return box_mesh(BBox3D(centroid=(0, 0, 0), size=(1, 1, 1)))


@pytest.fixture
def unit_cube_normalized(unit_cube):
    return normalize_unit_cube(unit_cube)


@pytest.fixture
def sphere():
    return from_trimesh(trimesh.creation.icosphere(subdivisions=2, radius=1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


FLOOR = -0.5


@pytest.fixture
def intrinsics():
    from geometry import Intrinsics

    return Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def make_scene(unit_cube_normalized, intrinsics):
    """Factory for small scenes: identity camera, a room whose floor is at FLOOR, perfect detections."""
    from body import BodyParams, body_joints3d, default_template
    from geometry import CameraPose, RoomLayout, project_box_to_rect, project_points, world_to_camera
    from losses import BodyState, ObjectState, SceneState

    def factory(boxes=(), body_translation=None, camera=None, sdf_resolution=8, mesh=None):
        camera = camera or CameraPose()
        layout = RoomLayout(BBox3D(centroid=(0.0, FLOOR + 1.5, 4.0), size=(8.0, 3.0, 10.0)))
        objects = tuple(
            ObjectState(
                box=box,
                mesh=mesh or unit_cube_normalized,
                detection=project_box_to_rect(box, camera, intrinsics),
                label=f"box_{i}",
            )
            for i, box in enumerate(boxes)
        )
        body = None
        keypoints = None
        if body_translation is not None:
            template = default_template()
            body = BodyState(template, BodyParams.neutral(template.joint_count, translation=body_translation))
            joints = body_joints3d(template, body.params)[template.keypoint_map]
            pixels = project_points(world_to_camera(joints, camera), intrinsics)
            keypoints = np.column_stack([pixels, np.ones(len(pixels))])
        return SceneState(camera, intrinsics, layout, objects, body=body, keypoints_2d=keypoints,
                          sdf_resolution=sdf_resolution)

    return factory


def floor_box(x: float, z: float, size=(1.0, 1.0, 1.0), yaw: float = 0.0, lift: float = 0.0) -> BBox3D:
    return BBox3D(centroid=(x, FLOOR + size[1] / 2.0 + lift, z), size=size, yaw=yaw)


@pytest.fixture
def on_floor():
    return floor_box
