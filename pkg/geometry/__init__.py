"""Oriented boxes, camera model, projection and overlap measures."""
from geometry.boxes import BBox3D, Rect2D, RoomLayout, box_corners, fit_box, normalize_yaw, yaw_matrix
from geometry.camera import (
    CameraPose,
    Intrinsics,
    camera_to_world,
    project_box_to_rect,
    project_point,
    project_points,
    world_to_camera,
)
from geometry.iou import iou_box3d, iou_rect

__all__ = [
    "BBox3D",
    "Rect2D",
    "RoomLayout",
    "CameraPose",
    "Intrinsics",
    "box_corners",
    "fit_box",
    "normalize_yaw",
    "yaw_matrix",
    "world_to_camera",
    "camera_to_world",
    "project_point",
    "project_points",
    "project_box_to_rect",
    "iou_rect",
    "iou_box3d",
]
