"""Evaluation measures: box IoUs, joint errors, vertex-to-vertex error and Procrustes variants."""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field

from body.model import body_joints3d
from geometry.boxes import BBox3D, Rect2D
from geometry.camera import CameraPose, Intrinsics, project_box_to_rect, project_points, world_to_camera
from geometry.iou import iou_box3d, iou_rect
from losses.state import SceneState
from mesh.core import TriMesh
from services.exceptions import DegenerateConfiguration, EmptyMatching, InvalidMatching, LengthMismatch

logger = logging.getLogger(__name__)

GREEDY_IOU_THRESHOLD = 0.15

Matching = Sequence[tuple[int, int]]


class EvalReport(BaseModel):
    """Scene and body accuracy of a prediction against ground truth.

    Body measures are None when either side has no body.
    """

    mean_iou3d: float = Field(..., ge=0.0, le=1.0)
    mean_iou2d: float = Field(..., ge=0.0, le=1.0)
    matched_pairs: int
    pje3d_m: float | None = None
    pje2d_px: float | None = None
    pje_mm: float | None = None
    p_pje_mm: float | None = None
    v2v_mm: float | None = None
    p_v2v_mm: float | None = None


@dataclass(frozen=True)
class ProcrustesResult:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    aligned: np.ndarray


def _check_matching(matching: Matching, n_pred: int, n_gt: int) -> list[tuple[int, int]]:
    pairs = [(int(p), int(g)) for p, g in matching]
    if not pairs:
        raise EmptyMatching()
    for p, g in pairs:
        if not (0 <= p < n_pred and 0 <= g < n_gt):
            raise InvalidMatching((p, g), n_pred, n_gt)
    return pairs


def mean_iou3d(pred: Sequence[BBox3D], gt: Sequence[BBox3D], matching: Matching) -> float:
    pairs = _check_matching(matching, len(pred), len(gt))
    return float(np.mean([iou_box3d(pred[p], gt[g]) for p, g in pairs]))


def mean_iou2d(pred: Sequence[Rect2D], gt: Sequence[Rect2D], matching: Matching) -> float:
    pairs = _check_matching(matching, len(pred), len(gt))
    return float(np.mean([iou_rect(pred[p], gt[g]) for p, g in pairs]))


def greedy_matching(pred: Sequence[BBox3D], gt: Sequence[BBox3D],
                    threshold: float = GREEDY_IOU_THRESHOLD) -> list[tuple[int, int]]:
    """Pair boxes by descending 3D IoU, each box used at most once, IoU >= threshold."""
    candidates = [
        (iou_box3d(a, b), p, g) for p, a in enumerate(pred) for g, b in enumerate(gt)
    ]
    # Stable sort keeps index order among ties.
    candidates.sort(key=lambda c: -c[0])
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    pairs = []
    for iou, p, g in candidates:
        if iou < threshold:
            break
        if p in used_pred or g in used_gt:
            continue
        used_pred.add(p)
        used_gt.add(g)
        pairs.append((p, g))
    return sorted(pairs)


def _paired(what: str, pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if len(pred) != len(gt):
        raise LengthMismatch(what, len(gt), len(pred))
    return pred, gt


def pje(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """Mean per-joint Euclidean distance, in the input units."""
    pred, gt = _paired("joints", pred_joints, gt_joints)
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def pje2d(pred_joints3d: np.ndarray, gt_keypoints2d: np.ndarray, cam: CameraPose, K: Intrinsics) -> float:
    """Mean pixel distance between projected predicted joints and 2D ground truth."""
    pred, gt = _paired("keypoints", pred_joints3d, gt_keypoints2d)
    pixels = project_points(world_to_camera(pred, cam), K, what="predicted joints")
    return float(np.mean(np.linalg.norm(pixels - gt[:, :2], axis=1)))


def v2v(pred_mesh: TriMesh, gt_mesh: TriMesh) -> float:
    """Mean distance between corresponding vertices, in millimeters."""
    pred, gt = _paired("vertices", pred_mesh.vertices, gt_mesh.vertices)
    return 1000.0 * float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def procrustes_align(src: np.ndarray, dst: np.ndarray) -> ProcrustesResult:
    """Similarity transform minimizing sum |s R src_i + t - dst_i|^2, with det(R) = +1.

    Raises:
        DegenerateConfiguration: fewer than 3 points, or src collinear.
    """
    src, dst = _paired("points", src, dst)
    n = len(src)
    if n < 3:
        raise DegenerateConfiguration(f"need at least 3 points, got {n}")
    mean_src = src.mean(axis=0)
    mean_dst = dst.mean(axis=0)
    src_c = src - mean_src
    dst_c = dst - mean_dst

    spread = np.linalg.svd(src_c, compute_uv=False)
    if spread[0] == 0.0 or spread[1] <= 1e-12 * spread[0]:
        raise DegenerateConfiguration("source points are collinear")
    var_src = float(np.sum(src_c**2)) / n

    cov = dst_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s[2, 2] = -1.0
    rotation = u @ s @ vt
    scale = float(np.trace(np.diag(d) @ s)) / var_src
    translation = mean_dst - scale * rotation @ mean_src
    aligned = scale * src @ rotation.T + translation
    return ProcrustesResult(scale, rotation, translation, aligned)


def p_v2v(pred_mesh: TriMesh, gt_mesh: TriMesh) -> float:
    """V2V after aligning the predicted vertices to the ground truth."""
    pred, gt = _paired("vertices", pred_mesh.vertices, gt_mesh.vertices)
    aligned = procrustes_align(pred, gt).aligned
    return 1000.0 * float(np.mean(np.linalg.norm(aligned - gt, axis=1)))


def p_pje(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """PJE in millimeters after Procrustes alignment."""
    pred, gt = _paired("joints", pred_joints, gt_joints)
    return 1000.0 * pje(procrustes_align(pred, gt).aligned, gt)


def _projected_rects(state: SceneState, what: str) -> list[Rect2D]:
    return [
        project_box_to_rect(obj.box, state.camera, state.intrinsics, what=f"{what} object {i}")
        for i, obj in enumerate(state.objects)
    ]


def evaluate_states(pred: SceneState, gt: SceneState, matching: Matching | None = None,
                    greedy: bool = False) -> EvalReport:
    """Score a predicted scene against ground truth.

    Without an explicit matching, objects pair by index unless `greedy` asks
    for IoU-based pairing.
    """
    pred_boxes = [obj.box for obj in pred.objects]
    gt_boxes = [obj.box for obj in gt.objects]
    if matching is None:
        if greedy:
            matching = greedy_matching(pred_boxes, gt_boxes)
        else:
            if len(pred_boxes) != len(gt_boxes):
                raise LengthMismatch("objects", len(gt_boxes), len(pred_boxes))
            matching = [(i, i) for i in range(len(gt_boxes))]
    pairs = _check_matching(matching, len(pred_boxes), len(gt_boxes))

    report = {
        "mean_iou3d": mean_iou3d(pred_boxes, gt_boxes, pairs),
        "mean_iou2d": mean_iou2d(_projected_rects(pred, "predicted"), _projected_rects(gt, "ground-truth"), pairs),
        "matched_pairs": len(pairs),
    }

    if pred.body is not None and gt.body is not None:
        pred_joints = body_joints3d(pred.body.template, pred.body.params, pred.body.mesh)
        gt_joints = body_joints3d(gt.body.template, gt.body.params, gt.body.mesh)
        report["pje3d_m"] = pje(pred_joints, gt_joints)
        report["pje_mm"] = 1000.0 * report["pje3d_m"]
        report["p_pje_mm"] = p_pje(pred_joints, gt_joints)
        report["v2v_mm"] = v2v(pred.body.mesh, gt.body.mesh)
        report["p_v2v_mm"] = p_v2v(pred.body.mesh, gt.body.mesh)
        if gt.keypoints_2d is not None:
            keypoints = pred_joints[pred.body.template.keypoint_map]
            report["pje2d_px"] = pje2d(keypoints, gt.keypoints_2d, pred.camera, pred.intrinsics)
    elif (pred.body is None) != (gt.body is None):
        logger.warning("Only one of prediction and ground truth has a body; body measures skipped")

    return EvalReport(**report)
