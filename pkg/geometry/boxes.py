"""Yaw-only oriented 3D boxes, room layouts and 2D rectangles.

World frame: +y points up, away from the floor. Boxes rotate only about +y.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np

# Corner i uses the signs CORNER_SIGNS[i] for (x, y, z), i.e. i = 4*bx + 2*by + bz
# where a set bit selects the positive half-extent.
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    wrapped = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    result = wrapped - math.pi
    # fmod can land exactly on +pi after the shift for inputs just below -pi
    return -math.pi if result >= math.pi else result


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about world +y by `yaw` radians."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _frozen(values, shape) -> np.ndarray:
    array = np.array(values, dtype=float).reshape(shape)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BBox3D:
    """Oriented 3D box: centroid and full extents in meters, yaw about +y in radians."""

    centroid: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        centroid = _frozen(self.centroid, (3,))
        size = _frozen(self.size, (3,))
        if not np.all(np.isfinite(centroid)) or not np.all(np.isfinite(size)):
            raise ValueError("Box centroid and size must be finite")
        if np.any(size <= 0.0):
            raise ValueError(f"Box size components must be positive, got {size.tolist()}")
        object.__setattr__(self, "centroid", centroid)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def rotation(self) -> np.ndarray:
        return yaw_matrix(self.yaw)

    def corners(self) -> np.ndarray:
        return box_corners(self)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounds (min, max) of the box corners."""
        corners = box_corners(self)
        return corners.min(axis=0), corners.max(axis=0)

    def replace(self, centroid=None, size=None, yaw=None) -> "BBox3D":
        return BBox3D(
            centroid=self.centroid if centroid is None else centroid,
            size=self.size if size is None else size,
            yaw=self.yaw if yaw is None else yaw,
        )

    def to_dict(self) -> dict:
        return {
            "centroid": [float(v) for v in self.centroid],
            "size": [float(v) for v in self.size],
            "yaw": float(self.yaw),
        }


@dataclass(frozen=True, eq=False)
class RoomLayout:
    """Cuboid room; the floor is the lowest face of the box."""

    box: BBox3D

    @property
    def floor_height(self) -> float:
        return float(box_corners(self.box)[:, 1].min())


@dataclass(frozen=True)
class Rect2D:
    """Axis-aligned image rectangle in pixels."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(
                f"Rect requires xmin < xmax and ymin < ymax, got "
                f"[{self.xmin}, {self.ymin}, {self.xmax}, {self.ymax}]"
            )

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0])

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def corners(self) -> np.ndarray:
        """Corners in the order (xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)."""
        return np.array(
            [
                [self.xmin, self.ymin],
                [self.xmax, self.ymin],
                [self.xmax, self.ymax],
                [self.xmin, self.ymax],
            ]
        )

    def as_list(self) -> list[float]:
        return [float(self.xmin), float(self.ymin), float(self.xmax), float(self.ymax)]


def box_corners(box: BBox3D) -> np.ndarray:
    """Return the 8 world-frame corners of `box` in CORNER_SIGNS order."""
    half = CORNER_SIGNS * (box.size / 2.0)
    return half @ box.rotation.T + box.centroid


def fit_box(corners: np.ndarray, yaw: float) -> BBox3D:
    """Refit a box from its corners given the yaw of its frame."""
    corners = np.asarray(corners, dtype=float)
    centroid = corners.mean(axis=0)
    local = (corners - centroid) @ yaw_matrix(yaw)
    size = local.max(axis=0) - local.min(axis=0)
    return BBox3D(centroid=centroid, size=size, yaw=yaw)
