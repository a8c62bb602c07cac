"""Simplified articulated human body: template, skinning and within-body priors."""
from body.model import BodyParams, BodyTemplate, body_forward, body_joints3d, posed_skeleton
from body.priors import bending_prior, pose_prior, self_penetration
from body.template import build_default_template, default_template, load_template, save_template

__all__ = [
    "BodyParams",
    "BodyTemplate",
    "body_forward",
    "body_joints3d",
    "posed_skeleton",
    "pose_prior",
    "bending_prior",
    "self_penetration",
    "build_default_template",
    "default_template",
    "load_template",
    "save_template",
]
