"""Two-stage fitting schedule: independent body and scene fits, then alternating joint refinement."""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from config import RunConfig
from losses.state import SceneState
from losses.total import LossBreakdown, loss_body_breakdown, loss_total, scene_stage1_loss
from optimizers.adam import Adam
from optimizers.base import Optimizer, StepResult
from optimizers.gradient import Objective
from optimizers.lbfgs import LBFGS
from optimizers.params import FreezeMask, ParamVector, pack, step_scales, unpack
from services.exceptions import IoError, LineSearchFailed

logger = logging.getLogger(__name__)

# Slack allowed when checking that a phase did not end above its start.
MONOTONE_TOLERANCE = 1e-9

LossFn = Callable[[SceneState], LossBreakdown]


@dataclass
class TrajectoryEntry:
    stage: str
    phase: str
    iteration: int
    terms: dict[str, float]
    total: float
    step_size: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrajectoryLog:
    """Per-iteration record of every phase, written as line-delimited JSON."""

    entries: list[TrajectoryEntry] = field(default_factory=list)

    def record(self, stage: str, phase: str, iteration: int, breakdown: LossBreakdown, step_size: float) -> None:
        entry = TrajectoryEntry(stage, phase, iteration, dict(breakdown.values), breakdown.total, step_size)
        self.entries.append(entry)
        logger.debug(f"[{stage}/{phase}] iteration {iteration}: total {breakdown.total:.6g}")

    def phase(self, stage: str, phase: str) -> list[TrajectoryEntry]:
        return [e for e in self.entries if e.stage == stage and e.phase == phase]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.entries)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_jsonl(), encoding="utf-8")
        except OSError as e:
            raise IoError(str(path), e) from e
        return path


@dataclass
class StageResult:
    state: SceneState
    log: TrajectoryLog
    initial_loss: float
    final_loss: float


def _objective(base: SceneState, vector: ParamVector, loss_fn: LossFn, trainable: np.ndarray,
               workers: int) -> Objective:
    def fn(x: np.ndarray) -> float:
        return loss_fn(unpack(base, vector.with_values(x))).total

    return Objective(fn, trainable, vector.entry_names(), workers)


def _trainable(vector: ParamVector, predicate: Callable[[str], bool]) -> np.ndarray:
    return FreezeMask.train_only(vector.layout, predicate).trainable(vector.layout)


def _is_body(name: str) -> bool:
    return name.startswith("body.")


def _is_scene(name: str) -> bool:
    return name.startswith(("camera.", "objects[", "layout."))


def _is_box_extent(name: str) -> bool:
    """Centroids and sizes of objects and layout; yaws and camera stay fixed."""
    return name.startswith(("objects[", "layout.")) and name.endswith((".centroid", ".size"))


def _run_body_phase(state: SceneState, optimizer: Optimizer, loss_fn: LossFn,
                    predicate: Callable[[str], bool], iterations: int, stage: str, phase: str,
                    log: TrajectoryLog, workers: int) -> SceneState:
    vector = pack(state)
    objective = _objective(state, vector, loss_fn, _trainable(vector, predicate), workers)

    def on_step(iteration: int, result: StepResult) -> None:
        log.record(stage, phase, iteration, loss_fn(unpack(state, vector.with_values(result.x))), result.step_size)

    result = optimizer.run(vector.values, objective, iterations, callback=on_step)
    logger.info(f"[{stage}/{phase}] {result.iterations} iteration(s): {result.initial_loss:.6g} -> {result.loss:.6g}")
    return unpack(state, vector.with_values(result.x))


def _run_scene_phase(state: SceneState, optimizer: Optimizer, loss_fn: LossFn,
                     predicate: Callable[[str], bool], iterations: int, rebuild_every: int, stage: str,
                     phase: str, log: TrajectoryLog, workers: int) -> SceneState:
    """Adam over the scene, rebuilding SDF grids every `rebuild_every` iterations.

    Returns the best iterate seen, re-scored on fresh grids; the starting state
    wins when that re-scoring is not an improvement.
    """
    start = state.rebuild_sdfs(workers)
    vector = pack(start)
    trainable = _trainable(vector, predicate)
    initial = loss_fn(start).total
    x = vector.values.copy()
    best_x, best_loss = x.copy(), initial
    current = start
    rebuilds = 1
    for iteration in range(iterations):
        if iteration and iteration % rebuild_every == 0:
            current = unpack(current, vector.with_values(x)).rebuild_sdfs(workers)
            rebuilds += 1
        objective = _objective(current, vector, loss_fn, trainable, workers)
        result = optimizer.step(x, objective)
        x = result.x
        if result.loss < best_loss:
            best_x, best_loss = x.copy(), result.loss
        log.record(stage, phase, iteration, loss_fn(unpack(current, vector.with_values(x))), result.step_size)

    final = unpack(current, vector.with_values(best_x)).rebuild_sdfs(workers)
    final_loss = loss_fn(final).total
    if final_loss > initial + MONOTONE_TOLERANCE:
        logger.warning(
            f"[{stage}/{phase}] best iterate scores {final_loss:.6g} on fresh grids, above the start "
            f"{initial:.6g}; keeping the starting scene"
        )
        final, final_loss = start, initial
    logger.info(
        f"[{stage}/{phase}] {iterations} iteration(s), {rebuilds} SDF rebuild(s): {initial:.6g} -> {final_loss:.6g}"
    )
    return final


def _scene_adam(lr: float, config: RunConfig, vector: ParamVector) -> Adam:
    schedule = config.schedule
    scale = step_scales(vector, schedule.scene_step_scale, schedule.scene_angle_step_scale)
    return Adam(lr, weight_decay=schedule.weight_decay_scene, scale=scale)


def _body_lbfgs(lr: float, config: RunConfig) -> LBFGS:
    schedule = config.schedule
    return LBFGS(lr, history_size=schedule.lbfgs_history, max_line_search=schedule.lbfgs_max_line_search)


def run_stage1(state: SceneState, config: RunConfig, log: TrajectoryLog | None = None,
               workers: int = 1) -> StageResult:
    """Fit the body to its keypoints and the scene to its detections, independently.

    Body: L-BFGS on the translation alone against the keypoint loss, then on
    every body parameter against the within-body loss. Scene: Adam on camera,
    boxes and layout against reprojection plus collision.
    """
    log = log if log is not None else TrajectoryLog()
    weights = config.weights
    schedule = config.schedule
    disabled = tuple(config.disabled_terms)

    def scene_loss(s: SceneState) -> LossBreakdown:
        return scene_stage1_loss(s, weights, disabled)

    def body_loss(s: SceneState) -> LossBreakdown:
        return loss_body_breakdown(s, weights)

    def keypoint_loss(s: SceneState) -> LossBreakdown:
        return loss_body_breakdown(s, weights, only=("keypoint_reprojection",))

    initial = scene_loss(state.rebuild_sdfs(workers)).total + body_loss(state).total
    logger.info(f"Stage I: {len(state.objects)} object(s), body {'present' if state.body else 'absent'}")

    if state.body is not None and state.keypoints_2d is not None:
        state = _run_body_phase(
            state, _body_lbfgs(schedule.lr_body_stage1, config), keypoint_loss,
            lambda name: name == "body.translation", schedule.stage1_body_translation_iters,
            "stage1", "body_translation", log, workers,
        )
        state = _run_body_phase(
            state, _body_lbfgs(schedule.lr_body_stage1, config), body_loss, _is_body,
            schedule.stage1_body_full_iters, "stage1", "body", log, workers,
        )

    state = _run_scene_phase(
        state, _scene_adam(schedule.lr_scene_stage1, config, pack(state)), scene_loss, _is_scene,
        schedule.stage1_scene_iters, schedule.sdf_rebuild_every, "stage1", "scene", log, workers,
    )
    final = scene_loss(state).total + body_loss(state).total
    logger.info(f"Stage I finished: {initial:.6g} -> {final:.6g}")
    return StageResult(state, log, initial, final)


def run_stage2(state: SceneState, config: RunConfig, log: TrajectoryLog | None = None,
               workers: int = 1) -> StageResult:
    """Alternate body and scene updates on the full loss with camera and yaws frozen."""
    log = log if log is not None else TrajectoryLog()
    weights = config.weights
    schedule = config.schedule
    disabled = tuple(config.disabled_terms)

    def total_loss(s: SceneState) -> LossBreakdown:
        return loss_total(s, weights, disabled)

    state = state.rebuild_sdfs(workers)
    initial = total_loss(state).total
    logger.info(f"Stage II: {schedule.stage2_alternations} alternation(s), initial loss {initial:.6g}")

    body_optimizer = _body_lbfgs(schedule.lr_body_stage2, config) if state.body is not None else None
    scene_optimizer = _scene_adam(schedule.lr_scene_stage2, config, pack(state))
    rebuilds = 1
    for alternation in range(schedule.stage2_alternations):
        if alternation and alternation % schedule.sdf_rebuild_every == 0:
            state = state.rebuild_sdfs(workers)
            rebuilds += 1

        if body_optimizer is not None and schedule.stage2_body_inner_iters:
            vector = pack(state)
            objective = _objective(state, vector, total_loss, _trainable(vector, _is_body), workers)
            try:
                result = body_optimizer.run(vector.values, objective, schedule.stage2_body_inner_iters)
                state = unpack(state, vector.with_values(result.x))
                step_size = result.history[-1].step_size if result.history else 0.0
            except LineSearchFailed as e:
                logger.warning(f"Stage II alternation {alternation}: body update skipped ({e})")
                body_optimizer.reset()
                step_size = 0.0
            log.record("stage2", "body", alternation, total_loss(state), step_size)

        if schedule.stage2_update_scene and schedule.stage2_scene_inner_iters:
            vector = pack(state)
            objective = _objective(state, vector, total_loss, _trainable(vector, _is_box_extent), workers)
            # Committed even when the loss rises; Adam's moments carry over to the next alternation.
            result = scene_optimizer.run(
                vector.values, objective, schedule.stage2_scene_inner_iters, keep_best=False
            )
            state = unpack(state, vector.with_values(result.x))
            step_size = result.history[-1].step_size if result.history else 0.0
            log.record("stage2", "scene", alternation, total_loss(state), step_size)

    state = state.rebuild_sdfs(workers)
    final = total_loss(state).total
    logger.info(f"Stage II finished after {rebuilds} SDF rebuild(s): {initial:.6g} -> {final:.6g}")
    return StageResult(state, log, initial, final)
