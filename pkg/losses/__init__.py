"""Energy terms of the joint human-scene objective."""
from losses.state import BodyState, ObjectState, SceneState, build_scene_sdfs
from losses.terms import (
    geman_mcclure,
    loss_body_ground,
    loss_body_penetration,
    loss_contact,
    loss_keypoint_reprojection,
    loss_obj_ground,
    loss_scene_collision,
    loss_scene_reprojection,
    smooth_l1,
)
from losses.total import (
    BODY_TERMS,
    TERM_NAMES,
    LossBreakdown,
    loss_body_breakdown,
    loss_body_total,
    loss_total,
    scene_stage1_loss,
)

__all__ = [
    "BodyState",
    "ObjectState",
    "SceneState",
    "build_scene_sdfs",
    "smooth_l1",
    "geman_mcclure",
    "loss_scene_reprojection",
    "loss_scene_collision",
    "loss_obj_ground",
    "loss_body_ground",
    "loss_contact",
    "loss_body_penetration",
    "loss_keypoint_reprojection",
    "loss_body_breakdown",
    "loss_body_total",
    "loss_total",
    "LossBreakdown",
    "TERM_NAMES",
    "BODY_TERMS",
    "scene_stage1_loss",
]
