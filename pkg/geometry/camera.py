"""Pinhole camera: pitch/roll orientation, intrinsics and projection.

The camera sits at the world origin and looks down its +z axis; image x grows
to the right and image y grows along camera +y. The camera-to-world rotation is
R = R_roll(z) @ R_pitch(x); `world_to_camera` applies R^T.
"""
import math
from dataclasses import dataclass

import numpy as np

from geometry.boxes import BBox3D, Rect2D, box_corners
from services.exceptions import NonPositiveDepth

EPS_DEPTH = 1e-6


def pitch_matrix(pitch: float) -> np.ndarray:
    c, s = math.cos(pitch), math.sin(pitch)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def roll_matrix(roll: float) -> np.ndarray:
    c, s = math.cos(roll), math.sin(roll)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraPose:
    """Camera orientation relative to the world, in radians."""

    pitch: float = 0.0
    roll: float = 0.0

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation R = R_roll @ R_pitch."""
        return roll_matrix(self.roll) @ pitch_matrix(self.pitch)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Image size must be positive, got {self.width}x{self.height}")


def world_to_camera(p: np.ndarray, cam: CameraPose) -> np.ndarray:
    """Map world points (3,) or (N, 3) into the camera frame."""
    return np.asarray(p, dtype=float) @ cam.rotation


def camera_to_world(p: np.ndarray, cam: CameraPose) -> np.ndarray:
    """Inverse of `world_to_camera`."""
    return np.asarray(p, dtype=float) @ cam.rotation.T


def project_point(p: np.ndarray, K: Intrinsics, eps_depth: float = EPS_DEPTH) -> np.ndarray:
    """Project a camera-frame point to pixels."""
    x, y, z = (float(v) for v in p)
    if z <= eps_depth:
        raise NonPositiveDepth(z)
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def project_points(points: np.ndarray, K: Intrinsics, eps_depth: float = EPS_DEPTH,
                   what: str | None = None) -> np.ndarray:
    """Vectorized `project_point` for (N, 3) camera-frame points."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    z = points[:, 2]
    if np.any(z <= eps_depth):
        raise NonPositiveDepth(float(z.min()), what)
    return np.stack([K.fx * points[:, 0] / z + K.cx, K.fy * points[:, 1] / z + K.cy], axis=1)


def project_box_to_rect(box: BBox3D, cam: CameraPose, K: Intrinsics,
                        what: str | None = None) -> Rect2D:
    """Axis-aligned rectangle bounding the projections of the 8 box corners."""
    pixels = project_points(world_to_camera(box_corners(box), cam), K, what=what)
    lo = pixels.min(axis=0)
    hi = pixels.max(axis=0)
    return Rect2D(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
