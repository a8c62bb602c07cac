"""Individual energy terms, each a pure function of a SceneState."""
from functools import lru_cache

import numpy as np

from body.model import body_joints3d
from body.priors import bending_prior, pose_prior, self_penetration
from config import LossWeights
from geometry.boxes import BBox3D, box_corners, yaw_matrix
from geometry.camera import EPS_DEPTH, project_box_to_rect, world_to_camera
from losses.state import ObjectState, SceneState, scene_vertex_tree
from mesh.sdf import SdfGrid, grid_cell_centers, sdf_query_many
from services.exceptions import NoObjects


def smooth_l1(x, beta: float):
    """Quadratic below beta, linear above; C1 at +-beta."""
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * ax**2 / beta, ax - 0.5 * beta)


def geman_mcclure(e, sigma: float):
    """e^2 sigma^2 / (e^2 + sigma^2), bounded by sigma^2."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    e2 = np.square(e)
    s2 = sigma * sigma
    return e2 * s2 / (e2 + s2)


def loss_scene_reprojection(state: SceneState, weights: LossWeights) -> float:
    """Mean over objects of the smooth-L1 distance between projected and detected rectangle corners."""
    if not state.objects:
        return 0.0
    total = 0.0
    for i, obj in enumerate(state.objects):
        rect = project_box_to_rect(obj.box, state.camera, state.intrinsics, what=f"object {i} ({obj.label})")
        total += float(np.sum(smooth_l1(rect.corners() - obj.detection.corners(), weights.smooth_l1_beta)))
    return total / len(state.objects)


def oriented_cell_centers(box: BBox3D, resolution: int) -> np.ndarray:
    """Centers of a resolution^3 voxelization of the box in its own (yawed) frame."""
    unit = (np.arange(resolution) + 0.5) / resolution - 0.5
    local = grid_cell_centers(unit[[0, 0, 0]], np.full(3, 1.0 / resolution), (resolution,) * 3)
    return (local * box.size) @ yaw_matrix(box.yaw).T + box.centroid


@lru_cache(maxsize=256)
def _object_collision(obj: ObjectState, grid: SdfGrid, resolution: int) -> float:
    if grid.is_empty:
        return 0.0
    values, _ = sdf_query_many(grid, oriented_cell_centers(obj.box, resolution))
    inside = np.minimum(values, 0.0)
    return float(np.sum(inside**2))


def loss_scene_collision(state: SceneState, weights: LossWeights) -> float:
    """Mean over objects of the squared penetration of their cells into the other objects."""
    if not state.objects or not state.has_sdfs:
        return 0.0
    total = sum(
        _object_collision(obj, grid, state.sdf_resolution)
        for obj, grid in zip(state.objects, state.scene_sdf_per_object)
    )
    return total / len(state.objects)


def loss_obj_ground(state: SceneState, weights: LossWeights) -> float:
    """Mean absolute gap between each box bottom and the floor."""
    if not state.objects:
        return 0.0
    floor = state.floor_height
    gaps = [abs(float(box_corners(obj.box)[:, 1].min()) - floor) for obj in state.objects]
    return sum(gaps) / len(gaps)


def loss_body_ground(state: SceneState, weights: LossWeights) -> float:
    if state.body is None:
        return 0.0
    return abs(float(state.body.mesh.vertices[:, 1].min()) - state.floor_height)


def loss_contact(state: SceneState, weights: LossWeights) -> float:
    """Robust distance from each contact vertex to its nearest scene-object vertex, summed."""
    if state.body is None or not len(state.body.template.contact_vertex_indices):
        return 0.0
    if not state.objects:
        raise NoObjects("contact")
    contacts = state.body.mesh.vertices[state.body.template.contact_vertex_indices]
    distances, _ = scene_vertex_tree(state.objects).query(contacts)
    return float(np.sum(geman_mcclure(distances, weights.sigma_contact)))


def loss_body_penetration(state: SceneState, weights: LossWeights) -> float:
    """Squared depth of body vertices inside any object, read from the scene-union grid."""
    if state.body is None or state.scene_sdf is None or state.scene_sdf.is_empty:
        return 0.0
    values, _ = sdf_query_many(state.scene_sdf, state.body.mesh.vertices)
    return float(np.sum(np.minimum(values, 0.0) ** 2))


def loss_keypoint_reprojection(state: SceneState, weights: LossWeights) -> float:
    """Confidence-weighted Geman-McClure distance between projected body joints and 2D keypoints.

    Joints on or behind the image plane contribute confidence * sigma^2.
    """
    if state.body is None or state.keypoints_2d is None:
        return 0.0
    template = state.body.template
    if len(state.keypoints_2d) != len(template.keypoint_map):
        raise ValueError(
            f"{len(state.keypoints_2d)} keypoints for a template with {len(template.keypoint_map)} slots"
        )
    joints = body_joints3d(template, state.body.params, state.body.mesh)[template.keypoint_map]
    cam = world_to_camera(joints, state.camera)
    K = state.intrinsics
    z = cam[:, 2]
    visible = z > EPS_DEPTH
    safe_z = np.where(visible, z, 1.0)
    pixels = np.stack([K.fx * cam[:, 0] / safe_z + K.cx, K.fy * cam[:, 1] / safe_z + K.cy], axis=1)
    errors = np.linalg.norm(pixels - state.keypoints_2d[:, :2], axis=1)
    sigma = weights.sigma_keypoint
    per_keypoint = np.where(visible, geman_mcclure(errors, sigma), sigma * sigma)
    return float(np.sum(state.keypoints_2d[:, 2] * per_keypoint))


def loss_pose_prior(state: SceneState, weights: LossWeights) -> float:
    return 0.0 if state.body is None else pose_prior(state.body.params)


def loss_bending_prior(state: SceneState, weights: LossWeights) -> float:
    if state.body is None:
        return 0.0
    return bending_prior(state.body.params, state.body.template.bend_spec)


def loss_self_penetration(state: SceneState, weights: LossWeights) -> float:
    if state.body is None:
        return 0.0
    return self_penetration(state.body.template, state.body.params)
