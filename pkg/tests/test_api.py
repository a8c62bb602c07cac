import json

import pytest
from fastapi.testclient import TestClient

from app import app
from services.documents import save_scene

client = TestClient(app)

SMALL_CONFIG = {"sdf_resolution": 8, "schedule": {"stage1_scene_iters": 2, "stage2_alternations": 1}}


@pytest.fixture
def scene(make_scene, on_floor, tmp_path):
    """A one-box scene document whose mesh path is absolute, so it does not depend on the data directory."""
    path = save_scene(make_scene([on_floor(0.5, 4.0)]), tmp_path / "scene.json")
    raw = json.loads(path.read_text())
    raw["objects"][0]["mesh"] = str(tmp_path / raw["objects"][0]["mesh"])
    return raw


def _upload(name, payload):
    return (name, json.dumps(payload).encode(), "application/json")


def test_root():
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["docs_url"] == "/docs"


def test_health():
    response = client.get("/api/v1/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_optimizers():
    assert client.get("/api/v1/optimizers").json() == ["adam", "lbfgs"]


def test_terms():
    body = client.get("/api/v1/terms").json()
    assert body["terms"][0] == "body"
    assert "contact" in body["terms"]
    assert body["body_terms"] == ["keypoint_reprojection", "pose_prior", "bending_prior", "self_penetration"]


def test_evaluate(scene):
    files = {"pred_file": _upload("pred.json", scene), "gt_file": _upload("gt.json", scene)}
    response = client.post("/api/v1/evaluate", files=files)
    assert response.status_code == 200
    report = response.json()
    assert report["mean_iou3d"] == pytest.approx(1.0)
    assert report["matched_pairs"] == 1
    assert report["pje_mm"] is None


def test_evaluate_with_matching(scene):
    files = {
        "pred_file": _upload("pred.json", scene),
        "gt_file": _upload("gt.json", scene),
        "matching_file": _upload("matching.json", [[0, 0]]),
    }
    assert client.post("/api/v1/evaluate", files=files).status_code == 200


def test_evaluate_bad_json(scene):
    files = {"pred_file": ("pred.json", b"{oops", "application/json"), "gt_file": _upload("gt.json", scene)}
    response = client.post("/api/v1/evaluate", files=files)
    assert response.status_code == 400
    assert response.json()["detail"].startswith("pred_file: invalid JSON")


def test_evaluate_empty_upload(scene):
    files = {"pred_file": ("pred.json", b"  ", "application/json"), "gt_file": _upload("gt.json", scene)}
    assert client.post("/api/v1/evaluate", files=files).status_code == 400


def test_evaluate_schema_error(scene):
    broken = dict(scene, schema="scenefit/0")
    files = {"pred_file": _upload("pred.json", broken), "gt_file": _upload("gt.json", scene)}
    response = client.post("/api/v1/evaluate", files=files)
    assert response.status_code == 422
    assert response.json()["detail"].startswith("schema:")


def test_optimize_returns_refined_document(scene):
    files = {"scene_file": _upload("room.json", scene), "config_file": _upload("config.json", SMALL_CONFIG)}
    response = client.post("/api/v1/optimize", files=files, data={"stage1_only": "true"})
    assert response.status_code == 200
    assert "refined_room.json" in response.headers["content-disposition"]
    refined = response.json()
    assert refined["schema"] == "scenefit/1"
    assert len(refined["objects"]) == 1


def test_optimize_bad_config(scene):
    files = {
        "scene_file": _upload("room.json", scene),
        "config_file": _upload("config.json", {"disabled_terms": ["gravity"]}),
    }
    response = client.post("/api/v1/optimize", files=files)
    assert response.status_code == 422
    assert response.json()["detail"].startswith("config")
