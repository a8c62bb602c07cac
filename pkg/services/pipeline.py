"""End-to-end operations behind the CLI and the HTTP API: optimize, evaluate, gradcheck, batch."""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from pydantic import BaseModel, ValidationError

from body.priors import bending_prior_gradient, pose_prior_gradient
from config import RunConfig, get_settings, schema_error
from losses.state import SceneState
from losses.total import BODY_TERMS, TERM_NAMES, LossBreakdown, loss_total
from mesh.core import TriMesh
from mesh.io import save_obj
from optimizers.gradient import central_difference
from optimizers.params import ParamVector, pack, unpack
from services.documents import LoadedScene, export_meshes, load_scene, save_scene
from services.exceptions import IoError, NoObjects, ScenefitError, SchemaError
from services.metrics import EvalReport, evaluate_states, procrustes_align
from services.schedule import TrajectoryLog, run_stage1, run_stage2

logger = logging.getLogger(__name__)

# Fixed step of the reference differences in gradcheck.
GRADCHECK_STEP = 1e-5


@dataclass
class OptimizeResult:
    state: SceneState
    log: TrajectoryLog
    breakdown: LossBreakdown
    out_path: Path
    log_path: Path
    manifest_path: Path | None = None


def _workers(workers: int | None) -> int:
    return get_settings().worker_count if workers is None else max(1, workers)


def trajectory_path(out_path: Path) -> Path:
    return out_path.with_name(f"{out_path.stem}.trajectory.jsonl")


def optimize_state(state: SceneState, config: RunConfig, stage1_only: bool = False,
                   workers: int = 1) -> tuple[SceneState, TrajectoryLog]:
    """Stage I, then Stage II unless `stage1_only`; the result carries fresh SDF grids."""
    log = TrajectoryLog()
    state = run_stage1(state, config, log, workers).state
    if stage1_only:
        return state.rebuild_sdfs(workers), log
    return run_stage2(state, config, log, workers).state, log


def optimize(scene_path: str | Path, config: RunConfig, out_path: str | Path, export_dir: str | Path | None = None,
             stage1_only: bool = False, workers: int | None = None) -> OptimizeResult:
    """Run the two-stage fit on a scene document and write the refined document.

    The trajectory goes to `config.log_path`, or next to the output when unset.
    """
    out_path = Path(out_path)
    loaded = load_scene(scene_path, config.sdf_resolution)
    state, log = optimize_state(loaded.state, config, stage1_only, _workers(workers))
    save_scene(state, out_path)
    log_path = log.write(config.log_path or trajectory_path(out_path))
    export_dir = export_dir or config.export_dir
    manifest = export_meshes(state, export_dir) if export_dir else None
    breakdown = loss_total(state, config.weights, config.disabled_terms)
    logger.info(f"Optimized {scene_path}: final loss {breakdown.total:.6g}")
    return OptimizeResult(state, log, breakdown, out_path, log_path, manifest)


class MatchingDocument(BaseModel):
    model_config = {"extra": "forbid"}

    pairs: list[tuple[int, int]]


def load_matching(path: str | Path) -> list[tuple[int, int]]:
    """Read `{"pairs": [[pred, gt], ...]}` or a bare list of pairs."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoError(str(path), e) from e
    except json.JSONDecodeError as e:
        raise SchemaError("matching", f"invalid JSON in {path} ({e})") from e
    return parse_matching(raw)


def parse_matching(raw) -> list[tuple[int, int]]:
    if isinstance(raw, list):
        raw = {"pairs": raw}
    try:
        return MatchingDocument.model_validate(raw).pairs
    except ValidationError as e:
        raise schema_error(e, "matching") from e


def evaluate(pred_path: str | Path, gt_path: str | Path, matching_path: str | Path | None = None,
             greedy: bool = False, aligned_mesh_path: str | Path | None = None) -> EvalReport:
    """Score a predicted scene document against a ground-truth one.

    With `aligned_mesh_path`, the predicted body mesh after Procrustes
    alignment to the ground truth is written there as OBJ.
    """
    pred = load_scene(pred_path)
    gt = load_scene(gt_path)
    matching = load_matching(matching_path) if matching_path else None
    report = evaluate_states(pred.state, gt.state, matching, greedy)
    if aligned_mesh_path is not None:
        if pred.state.body is None or gt.state.body is None:
            logger.warning("No aligned mesh written: prediction or ground truth has no body")
        else:
            pred_mesh, gt_mesh = pred.state.body.mesh, gt.state.body.mesh
            aligned = procrustes_align(pred_mesh.vertices, gt_mesh.vertices).aligned
            save_obj(TriMesh.trusted(aligned, pred_mesh.faces), aligned_mesh_path)
    logger.info(f"Evaluated {pred_path} against {gt_path}: 3D IoU {report.mean_iou3d:.4f}")
    return report


class GradcheckEntry(BaseModel):
    term: str
    # "fd" compares the engine's differences against fixed-step ones; "analytic" checks a closed form.
    kind: str
    parameters: int
    max_abs_error: float
    max_rel_error: float


class GradcheckReport(BaseModel):
    entries: list[GradcheckEntry]

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)


def _compare(term: str, kind: str, engine: np.ndarray, reference: np.ndarray) -> GradcheckEntry:
    diff = np.abs(engine - reference)
    scale = np.maximum(1.0, np.maximum(np.abs(engine), np.abs(reference)))
    return GradcheckEntry(
        term=term,
        kind=kind,
        parameters=len(engine),
        max_abs_error=float(diff.max(initial=0.0)),
        max_rel_error=float((diff / scale).max(initial=0.0)),
    )


def _term_functions(config: RunConfig) -> dict[str, Callable[[SceneState], float]]:
    weights = config.weights
    functions: dict[str, Callable[[SceneState], float]] = {}
    for name in TERM_NAMES:
        if name != "body":
            functions[name] = lambda s, name=name: loss_total(s, weights, only=(name,)).values[name]
    for name, _, fn in BODY_TERMS:
        functions[name] = lambda s, fn=fn: fn(s, weights)
    return functions


def _prior_gradients(state: SceneState, vector: ParamVector) -> dict[str, np.ndarray]:
    params = state.body.params
    pose_grad, shape_grad = pose_prior_gradient(params)
    pose_prior = np.zeros(len(vector))
    pose_part, shape_part = vector.part("body.pose"), vector.part("body.shape_scale")
    pose_prior[pose_part.start:pose_part.stop] = pose_grad.reshape(-1)
    pose_prior[shape_part.start:shape_part.stop] = shape_grad
    bending = np.zeros(len(vector))
    bending[pose_part.start:pose_part.stop] = bending_prior_gradient(params, state.body.template.bend_spec).reshape(-1)
    return {"pose_prior": pose_prior, "bending_prior": bending}


def gradcheck_state(state: SceneState, config: RunConfig, workers: int = 1) -> GradcheckReport:
    """Engine gradients of every term against fixed-step differences, plus the analytic priors.

    SDF grids are rebuilt once and then held fixed for every finite-difference evaluation.
    """
    state = state.rebuild_sdfs(workers)
    vector = pack(state)
    names = vector.entry_names()
    entries = []
    for term, fn in _term_functions(config).items():
        def loss(x: np.ndarray, fn=fn) -> float:
            return fn(unpack(state, vector.with_values(x)))

        try:
            loss(vector.values)
        except NoObjects:
            logger.info(f"Skipping gradcheck of '{term}': the scene has no objects")
            continue
        engine = central_difference(loss, vector.values, names=names, workers=workers)
        reference = central_difference(loss, vector.values, names=names, workers=workers, h=GRADCHECK_STEP)
        entries.append(_compare(term, "fd", engine, reference))

    if state.body is not None:
        analytic = _prior_gradients(state, vector)
        functions = _term_functions(config)
        for term, expected in analytic.items():
            def loss(x: np.ndarray, fn=functions[term]) -> float:
                return fn(unpack(state, vector.with_values(x)))

            engine = central_difference(loss, vector.values, names=names, workers=workers)
            entries.append(_compare(term, "analytic", engine, expected))
    return GradcheckReport(entries=entries)


def gradcheck(scene_path: str | Path, config: RunConfig, workers: int | None = None) -> GradcheckReport:
    loaded: LoadedScene = load_scene(scene_path, config.sdf_resolution)
    report = gradcheck_state(loaded.state, config, _workers(workers))
    logger.info(f"Gradcheck of {scene_path}: max relative error {report.max_rel_error:.3g}")
    return report


def _optimize_one(scene_path: str, out_path: str, config: dict, stage1_only: bool) -> dict:
    try:
        result = optimize(scene_path, RunConfig.model_validate(config), out_path, stage1_only=stage1_only, workers=1)
    except ScenefitError as e:
        logging.getLogger(__name__).error(f"Optimizing {scene_path} failed: {e}")
        return {"scene": scene_path, "status": "failed", "error": type(e).__name__, "message": str(e)}
    return {"scene": scene_path, "status": "ok", "out": str(result.out_path), "total": result.breakdown.total}


def batch(scene_dir: str | Path, out_dir: str | Path, config: RunConfig, stage1_only: bool = False,
          workers: int | None = None) -> list[dict]:
    """Optimize every *.json scene in `scene_dir`, one scene per worker process.

    Per-scene trajectories follow the outputs; `config.log_path` is ignored.
    """
    scene_dir = Path(scene_dir)
    out_dir = Path(out_dir)
    scenes = sorted(scene_dir.glob("*.json"))
    if not scenes:
        logger.warning(f"No scene documents found in {scene_dir}")
        return []
    per_scene = config.model_copy(update={"log_path": None, "export_dir": None}).model_dump()
    jobs = [(str(path), str(out_dir / path.name), per_scene, stage1_only) for path in scenes]
    max_workers = min(_workers(workers), len(jobs))
    logger.info(f"Batch optimizing {len(jobs)} scene(s) with {max_workers} worker(s)")
    if max_workers == 1:
        return [_optimize_one(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(_optimize_one, *zip(*jobs)))
