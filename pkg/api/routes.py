"""API routes for the scene fitting service."""
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import List

from fastapi import APIRouter, File, Form, HTTPException, UploadFile
from fastapi.responses import FileResponse
from starlette.background import BackgroundTask
from starlette.concurrency import run_in_threadpool

from api.models import EvaluateResponse, HealthResponse, TermsResponse
from config import get_settings, parse_run_config
from losses.total import BODY_TERMS, TERM_NAMES
from optimizers.factory import get_available_optimizer_names
from services.documents import document_from_state, parse_scene, state_from_scene
from services.exceptions import DocumentError, MeshError, OptimizationError, ScenefitError
from services.metrics import evaluate_states
from services.pipeline import optimize_state, parse_matching

router = APIRouter(tags=["scenefit"])
logger = logging.getLogger(__name__)


def cleanup_temp_file(file_path: str):
    """Function to remove a temporary file."""
    try:
        os.remove(file_path)
        logger.info(f"Cleaned up temporary file: {file_path}")
    except OSError as e:
        logger.error(f"Error cleaning up temporary file {file_path}: {e}")


async def read_json_upload(upload: UploadFile, field: str):
    """Read and decode a JSON upload; undecodable or empty files are a 400."""
    try:
        content = await upload.read()
    finally:
        await upload.close()
    try:
        text = content.decode("utf-8")
    except UnicodeDecodeError as e:
        raise HTTPException(status_code=400, detail=f"{field}: file is not UTF-8 text") from e
    if not text.strip():
        raise HTTPException(status_code=400, detail=f"{field}: file is empty")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise HTTPException(status_code=400, detail=f"{field}: invalid JSON ({e})") from e


def _http_error(e: ScenefitError, endpoint: str) -> HTTPException:
    if isinstance(e, (DocumentError, MeshError)):
        return HTTPException(status_code=422, detail=str(e))
    if isinstance(e, OptimizationError):
        logger.error(f"Optimization error in {endpoint}: {e}")
        return HTTPException(status_code=500, detail=f"Optimization failed: {e}")
    return HTTPException(status_code=422, detail=str(e))


def _optimize_document(raw_scene: dict, raw_config: dict | None, stage1_only: bool) -> str:
    """Fit an uploaded scene and return the refined document as JSON text."""
    settings = get_settings()
    config = parse_run_config(raw_config or {})
    document = parse_scene(raw_scene)
    data_dir = Path(settings.data_dir)
    state = state_from_scene(document, data_dir, config.sdf_resolution)
    state, _ = optimize_state(state, config, stage1_only, settings.worker_count)
    # Paths in the returned document stay relative to the data directory.
    return document_from_state(state, data_dir / "refined.json").to_json()


@router.post("/optimize")
async def optimize_endpoint(
    scene_file: UploadFile = File(..., description="Scene document JSON (schema scenefit/1)"),
    config_file: UploadFile | None = File(None, description="Optional RunConfig JSON"),
    stage1_only: bool = Form(False, description="Stop before the joint stage"),
) -> FileResponse:
    """Optimize an uploaded scene and return the refined document as a downloadable file.

    Mesh and template paths in the document resolve against SCENEFIT_DATA_DIR.
    """
    temp_file_path = None
    try:
        raw_scene = await read_json_upload(scene_file, "scene_file")
        raw_config = await read_json_upload(config_file, "config_file") if config_file is not None else None

        refined = await run_in_threadpool(_optimize_document, raw_scene, raw_config, stage1_only)

        with tempfile.NamedTemporaryFile(delete=False, mode="w", encoding="utf-8", suffix=".json") as tmp_file:
            tmp_file.write(refined)
            temp_file_path = tmp_file.name

        original_filename = scene_file.filename or "scene.json"
        download_filename = f"refined_{original_filename}"

        cleanup_task = BackgroundTask(cleanup_temp_file, temp_file_path)

        return FileResponse(
            path=temp_file_path,
            media_type="application/json",
            filename=download_filename,
            background=cleanup_task,
        )

    except ScenefitError as e:
        if temp_file_path:
            cleanup_temp_file(temp_file_path)
        raise _http_error(e, "/optimize") from e
    except HTTPException:
        if temp_file_path:
            cleanup_temp_file(temp_file_path)
        raise
    except Exception as e:
        if temp_file_path:
            cleanup_temp_file(temp_file_path)
        logger.exception(f"Unexpected error in /optimize endpoint: {e}")
        raise HTTPException(
            status_code=500,
            detail=f"An unexpected error occurred during optimization: {str(e)}"
        ) from e


def _evaluate_documents(raw_pred: dict, raw_gt: dict, raw_matching, greedy: bool) -> dict:
    data_dir = Path(get_settings().data_dir)
    pred = state_from_scene(parse_scene(raw_pred), data_dir)
    gt = state_from_scene(parse_scene(raw_gt), data_dir)
    matching = parse_matching(raw_matching) if raw_matching is not None else None
    return evaluate_states(pred, gt, matching, greedy).model_dump()


@router.post("/evaluate", response_model=EvaluateResponse)
async def evaluate_endpoint(
    pred_file: UploadFile = File(..., description="Predicted scene document"),
    gt_file: UploadFile = File(..., description="Ground-truth scene document"),
    matching_file: UploadFile | None = File(None, description="Optional JSON list of [pred, gt] index pairs"),
    greedy: bool = Form(False, description="Match boxes greedily by 3D IoU when no matching is given"),
):
    """Score a predicted scene against ground truth."""
    try:
        raw_pred = await read_json_upload(pred_file, "pred_file")
        raw_gt = await read_json_upload(gt_file, "gt_file")
        raw_matching = await read_json_upload(matching_file, "matching_file") if matching_file is not None else None
        return await run_in_threadpool(_evaluate_documents, raw_pred, raw_gt, raw_matching, greedy)
    except ScenefitError as e:
        raise _http_error(e, "/evaluate") from e
    except HTTPException:
        raise
    except Exception as e:
        logger.exception(f"Unexpected error in /evaluate endpoint: {e}")
        raise HTTPException(status_code=500, detail=f"An unexpected error occurred during evaluation: {str(e)}") from e


@router.get("/health", response_model=HealthResponse)
async def health_check():
    """Simple health check endpoint."""
    return {"status": "ok"}


@router.get("/optimizers", response_model=List[str])
async def list_optimizers():
    """Lists the registered optimizer names."""
    return get_available_optimizer_names()


@router.get("/terms", response_model=TermsResponse)
async def list_terms():
    """Lists the loss terms that can be disabled."""
    return {"terms": list(TERM_NAMES), "body_terms": [name for name, _, _ in BODY_TERMS]}
