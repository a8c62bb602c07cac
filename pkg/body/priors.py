"""Within-body priors: L2 pose/shape prior, elbow/knee bending prior and capsule self-penetration."""
from typing import Sequence

import numpy as np

from body.model import BodyParams, BodyTemplate, posed_skeleton
from services.exceptions import BadJointIndex

BendSpec = Sequence[tuple[int, int, int]]


def pose_prior(params: BodyParams) -> float:
    """Squared norm of the pose plus squared deviation of the shape scale from 1."""
    return float(np.sum(params.pose**2) + np.sum((params.shape_scale - 1.0) ** 2))


def pose_prior_gradient(params: BodyParams) -> tuple[np.ndarray, np.ndarray]:
    """d pose_prior / d (pose, shape_scale)."""
    return 2.0 * params.pose, 2.0 * (params.shape_scale - 1.0)


def _check_bend_spec(params: BodyParams, bend_spec: BendSpec) -> None:
    for joint, axis, _ in bend_spec:
        if not 0 <= joint < len(params.pose):
            raise BadJointIndex(joint, len(params.pose))
        if axis not in (0, 1, 2):
            raise ValueError(f"Bend axis must be 0, 1 or 2, got {axis}")


def bending_prior(params: BodyParams, bend_spec: BendSpec) -> float:
    """Sum of exp(sign * angle) over the listed (joint, axis, sign) entries."""
    _check_bend_spec(params, bend_spec)
    return float(sum(np.exp(sign * params.pose[joint, axis]) for joint, axis, sign in bend_spec))


def bending_prior_gradient(params: BodyParams, bend_spec: BendSpec) -> np.ndarray:
    """d bending_prior / d pose, same shape as the pose."""
    _check_bend_spec(params, bend_spec)
    grad = np.zeros_like(params.pose)
    for joint, axis, sign in bend_spec:
        grad[joint, axis] += sign * np.exp(sign * params.pose[joint, axis])
    return grad


def segment_distances(p1: np.ndarray, q1: np.ndarray, p2: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Closest distance between segments p1q1 and p2q2, vectorized over the leading axis.

    After Ericson, ClosestPtSegmentSegment (Real-Time Collision Detection, 2004).
    """
    eps = 1e-12
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b

    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > eps, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = np.where(e > eps, (b * s + f) / e, 0.0)
        # Re-clamp t and recompute s where t left [0, 1].
        s = np.where(t < 0.0, np.where(a > eps, np.clip(-c / a, 0.0, 1.0), 0.0), s)
        s = np.where(t > 1.0, np.where(a > eps, np.clip((b - c) / a, 0.0, 1.0), 0.0), s)
        # Second segment is a point.
        s = np.where(e > eps, s, np.where(a > eps, np.clip(-c / a, 0.0, 1.0), 0.0))
    t = np.clip(t, 0.0, 1.0)
    closest1 = p1 + d1 * s[:, None]
    closest2 = p2 + d2 * t[:, None]
    return np.linalg.norm(closest1 - closest2, axis=1)


def non_adjacent_bone_pairs(template: BodyTemplate) -> list[tuple[int, int]]:
    """Index pairs into `template.bones` of bones that share no joint."""
    bones = template.bones
    pairs = []
    for i in range(len(bones)):
        for k in range(i + 1, len(bones)):
            if not set(bones[i]) & set(bones[k]):
                pairs.append((i, k))
    return pairs


def self_penetration(template: BodyTemplate, params: BodyParams) -> float:
    """Sum over non-adjacent bone pairs of max(0, r_a + r_b - capsule axis distance)^2."""
    pairs = non_adjacent_bone_pairs(template)
    if not pairs:
        return 0.0
    joints = posed_skeleton(template, params)
    bones = np.array(template.bones)
    first = bones[[i for i, _ in pairs]]
    second = bones[[k for _, k in pairs]]
    distances = segment_distances(joints[first[:, 0]], joints[first[:, 1]],
                                  joints[second[:, 0]], joints[second[:, 1]])
    reach = template.capsule_radii[first[:, 1]] + template.capsule_radii[second[:, 1]]
    return float(np.sum(np.maximum(0.0, reach - distances) ** 2))
