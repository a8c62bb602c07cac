"""Weighted within-body and total losses with a per-term breakdown."""
from dataclasses import dataclass
from typing import Callable, Iterable

from config import LossWeights
from losses import terms
from losses.state import SceneState

# Summation order of the total loss.
TERM_NAMES = (
    "body",
    "scene_reprojection",
    "scene_collision",
    "obj_ground",
    "body_ground",
    "contact",
    "body_penetration",
)

_TERM_FUNCTIONS: dict[str, Callable[[SceneState, LossWeights], float]] = {
    "scene_reprojection": terms.loss_scene_reprojection,
    "scene_collision": terms.loss_scene_collision,
    "obj_ground": terms.loss_obj_ground,
    "body_ground": terms.loss_body_ground,
    "contact": terms.loss_contact,
    "body_penetration": terms.loss_body_penetration,
}


# Terms of the within-body loss, with the LossWeights field holding each weight.
BODY_TERMS = (
    ("keypoint_reprojection", "w_keypoint", terms.loss_keypoint_reprojection),
    ("pose_prior", "w_pose_prior", terms.loss_pose_prior),
    ("bending_prior", "w_bend", terms.loss_bending_prior),
    ("self_penetration", "w_selfpen", terms.loss_self_penetration),
)


def term_weight(name: str, weights: LossWeights) -> float:
    return 1.0 if name == "body" else float(getattr(weights, name))


def loss_body_breakdown(state: SceneState, weights: LossWeights,
                        only: Iterable[str] | None = None) -> "LossBreakdown":
    """Per-term view of the within-body loss; `only` restricts it to some of BODY_TERMS."""
    selected = None if only is None else set(only)
    values: dict[str, float] = {}
    applied: dict[str, float] = {}
    total = 0.0
    for name, weight_field, fn in BODY_TERMS:
        if selected is not None and name not in selected:
            continue
        value = 0.0 if state.body is None else fn(state, weights)
        values[name] = value
        applied[name] = float(getattr(weights, weight_field))
        total += applied[name] * value
    return LossBreakdown(values=values, weights=applied, total=total)


def loss_body_total(state: SceneState, weights: LossWeights) -> float:
    """Keypoint reprojection plus the weighted pose, bending and self-penetration priors."""
    return loss_body_breakdown(state, weights).total


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted term values, their weights and the weighted total."""

    values: dict[str, float]
    weights: dict[str, float]
    total: float

    @property
    def weighted(self) -> dict[str, float]:
        return {name: self.weights[name] * self.values[name] for name in self.values}

    def to_dict(self) -> dict:
        return {"terms": dict(self.values), "total": self.total}


def loss_total(state: SceneState, weights: LossWeights, disabled: Iterable[str] = (),
               only: Iterable[str] | None = None) -> LossBreakdown:
    """Total loss. `disabled` terms get weight 0; `only` restricts which terms are evaluated."""
    disabled = set(disabled)
    selected = TERM_NAMES if only is None else tuple(n for n in TERM_NAMES if n in set(only))
    values: dict[str, float] = {}
    applied: dict[str, float] = {}
    total = 0.0
    for name in selected:
        weight = 0.0 if name in disabled else term_weight(name, weights)
        value = loss_body_total(state, weights) if name == "body" else _TERM_FUNCTIONS[name](state, weights)
        values[name] = value
        applied[name] = weight
        total += weight * value
    return LossBreakdown(values=values, weights=applied, total=total)


def scene_stage1_loss(state: SceneState, weights: LossWeights, disabled: Iterable[str] = ()) -> LossBreakdown:
    """Within-scene objective of the first stage: reprojection and collision only."""
    return loss_total(state, weights, disabled, only=("scene_reprojection", "scene_collision"))
