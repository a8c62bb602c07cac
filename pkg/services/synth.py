"""Synthetic ground-truth scenes with exact 2D evidence and perturbed initial estimates."""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import trimesh

from body.model import BodyParams, BodyTemplate, body_joints3d
from body.template import default_template
from config import LossWeights, SynthSpec
from geometry.boxes import BBox3D, RoomLayout
from geometry.camera import CameraPose, Intrinsics, project_box_to_rect, project_points, world_to_camera
from losses.state import BodyState, ObjectState, SceneState
from losses.terms import loss_obj_ground, loss_scene_collision
from mesh.core import normalize_unit_cube
from mesh.io import from_trimesh, save_obj
from services.exceptions import PlacementFailed, SynthError

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 10_000
# Camera distance to the wall behind it, and the nearest object depth.
BACK_WALL_GAP = 0.5
MIN_DEPTH = 2.0
# Clearance between footprints on top of their bounding circles.
CLEARANCE = 0.2
BODY_RADIUS = 0.5
GROUND_TRUTH_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SynthScene:
    initial: SceneState
    ground_truth: SceneState


def _unit_mesh(kind: str):
    if kind == "icosphere":
        tm = trimesh.creation.icosphere(subdivisions=2)
    else:
        tm = trimesh.creation.box(extents=(1.0, 1.0, 1.0))
    return normalize_unit_cube(from_trimesh(tm))


def _left_palm(template: BodyTemplate) -> tuple[float, float]:
    """Rest-pose x of the left palm and the height of its lowest contact vertex."""
    contacts = template.mesh.vertices[template.contact_vertex_indices]
    palm = contacts[contacts[:, 0] > 0.3]
    if not len(palm):
        raise SynthError("Body template has no left-palm contact vertices")
    return float(palm[:, 0].min()), float(palm[:, 1].min())


def _footprint_radius(size: np.ndarray) -> float:
    return float(np.hypot(size[0], size[2])) / 2.0


def _fits(x: float, z: float, radius: float, taken: list[tuple[float, float, float]],
          x_range: tuple[float, float], z_range: tuple[float, float]) -> bool:
    if not (x_range[0] + radius <= x <= x_range[1] - radius and z_range[0] + radius <= z <= z_range[1] - radius):
        return False
    return all(np.hypot(x - ox, z - oz) > radius + r + CLEARANCE for ox, oz, r in taken)


def synth_scene(seed: int, spec: SynthSpec | None = None, mesh_dir: str | Path | None = None) -> SynthScene:
    """Generate a ground-truth scene and its perturbed initial estimate, deterministically per seed.

    Objects stand on the floor without touching each other. With a human, the
    body stands on the floor with its left hand resting on object 0.

    Raises:
        PlacementFailed: rejection sampling ran out of attempts.
    """
    spec = spec or SynthSpec()
    rng = np.random.default_rng(seed)
    width = rng.uniform(*spec.room_width)
    depth = rng.uniform(*spec.room_depth)
    height = rng.uniform(*spec.room_height)
    floor = -spec.camera_height
    layout = RoomLayout(
        BBox3D(centroid=(0.0, floor + height / 2.0, depth / 2.0 - BACK_WALL_GAP), size=(width, height, depth))
    )
    floor = layout.floor_height
    x_range = (-width / 2.0, width / 2.0)
    z_range = (MIN_DEPTH, depth - BACK_WALL_GAP)

    camera = CameraPose(pitch=spec.camera_pitch, roll=0.0)
    intrinsics = Intrinsics(spec.fx, spec.fy, spec.width / 2.0, spec.height / 2.0, spec.width, spec.height)
    template = default_template()
    palm_x, palm_y = _left_palm(template)

    boxes: list[BBox3D] = []
    taken: list[tuple[float, float, float]] = []
    body_translation = None
    for i in range(spec.object_count):
        size = rng.uniform(*spec.object_size, size=3)
        yaw = 0.0 if i == 0 else float(rng.uniform(-np.pi / 2.0, np.pi / 2.0))
        if i == 0 and spec.human:
            # Table height: the left hand rests on the top face.
            size[1] = palm_y
        radius = _footprint_radius(size)
        for _ in range(MAX_ATTEMPTS):
            x = rng.uniform(*x_range)
            z = rng.uniform(*z_range)
            if i == 0 and spec.human:
                body_x = x - size[0] / 2.0 - palm_x
                body_fits = _fits(body_x, z, BODY_RADIUS, [], x_range, z_range)
                # The body stands right next to object 0, so only test it against the room here.
                if body_fits and _fits(x, z, radius, taken, x_range, z_range):
                    body_translation = np.array([body_x, floor, z])
                    taken.append((x, z, radius))
                    taken.append((body_x, z, BODY_RADIUS))
                    break
            elif _fits(x, z, radius, taken, x_range, z_range):
                taken.append((x, z, radius))
                break
        else:
            raise PlacementFailed(f"object {i}", MAX_ATTEMPTS)
        boxes.append(BBox3D(centroid=(x, floor + size[1] / 2.0, z), size=size, yaw=yaw))

    mesh = _unit_mesh(spec.mesh_kind)
    mesh_paths: list[str | None] = []
    for i in range(len(boxes)):
        if mesh_dir is None:
            mesh_paths.append(None)
        else:
            mesh_paths.append(str(save_obj(mesh, Path(mesh_dir) / f"object_{i}.obj").resolve()))

    objects = tuple(
        ObjectState(
            box=box,
            mesh=mesh,
            detection=project_box_to_rect(box, camera, intrinsics, what=f"object {i}"),
            label=f"{spec.mesh_kind}_{i}",
            mesh_path=mesh_paths[i],
        )
        for i, box in enumerate(boxes)
    )

    body = None
    keypoints = None
    if spec.human:
        params = BodyParams.neutral(template.joint_count, translation=body_translation)
        body = BodyState(template, params)
        joints = body_joints3d(template, params, body.mesh)[template.keypoint_map]
        pixels = project_points(world_to_camera(joints, camera), intrinsics, what="body keypoints")
        keypoints = np.column_stack([pixels, np.ones(len(pixels))])

    truth = SceneState(camera, intrinsics, layout, objects, body=body, keypoints_2d=keypoints)
    _check_ground_truth(truth)

    initial_objects = []
    for obj in objects:
        box = obj.box
        centroid = box.centroid + rng.normal(0.0, spec.centroid_sigma, size=3)
        size = np.maximum(box.size + rng.normal(0.0, spec.size_sigma, size=3), 0.05)
        yaw = box.yaw + rng.normal(0.0, spec.yaw_sigma)
        initial_objects.append(obj.with_box(BBox3D(centroid=centroid, size=size, yaw=yaw)))
    initial_body = body
    if body is not None:
        translation = body.params.translation + rng.normal(0.0, spec.body_translation_sigma, size=3)
        initial_body = body.with_params(body.params.replace(translation=translation))
    initial = truth.replace(objects=tuple(initial_objects), body=initial_body)

    logger.info(f"Synthesized scene (seed {seed}): {len(objects)} object(s), human {'yes' if body else 'no'}")
    return SynthScene(initial=initial, ground_truth=truth)


def _check_ground_truth(state: SceneState) -> None:
    weights = LossWeights()
    ground = loss_obj_ground(state, weights)
    collision = loss_scene_collision(state.rebuild_sdfs(), weights)
    if ground > GROUND_TRUTH_TOLERANCE or collision > GROUND_TRUTH_TOLERANCE:
        raise SynthError(
            f"Generated ground truth is not at rest (ground loss {ground:.3g}, collision loss {collision:.3g})"
        )
