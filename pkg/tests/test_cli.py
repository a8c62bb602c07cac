import json

import pytest

from cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from services.pipeline import parse_matching, trajectory_path
from services.exceptions import SchemaError

SMALL_CONFIG = {
    "sdf_resolution": 8,
    "schedule": {
        "stage1_body_translation_iters": 2,
        "stage1_body_full_iters": 2,
        "stage1_scene_iters": 2,
        "stage2_alternations": 1,
    },
}


@pytest.fixture(scope="module")
def synth_files(tmp_path_factory):
    directory = tmp_path_factory.mktemp("synth")
    spec = directory / "spec.json"
    spec.write_text(json.dumps({"object_count": 1, "centroid_sigma": 0.05}))
    init, gt = directory / "init.json", directory / "gt.json"
    code = main(["synth", "--seed", "11", "--spec", str(spec), "--out-init", str(init), "--out-gt", str(gt)])
    assert code == EXIT_OK
    return init, gt


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return path


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_synth_writes_documents(synth_files):
    init, gt = synth_files
    raw = json.loads(gt.read_text())
    assert raw["schema"] == "scenefit/1"
    assert len(raw["objects"]) == 1
    assert raw["objects"][0]["mesh"] == "meshes/object_0.obj"
    assert json.loads(init.read_text())["objects"][0]["box"] != raw["objects"][0]["box"]


def test_evaluate_ground_truth_against_itself(synth_files, tmp_path, capsys):
    _, gt = synth_files
    capsys.readouterr()
    out = tmp_path / "report.json"
    assert main(["--json", "evaluate", "--pred", str(gt), "--gt", str(gt), "--out", str(out)]) == EXIT_OK
    report = _json_out(capsys)
    assert report["mean_iou3d"] == pytest.approx(1.0)
    assert report["pje_mm"] == pytest.approx(0.0, abs=1e-9)
    assert json.loads(out.read_text()) == report


def test_evaluate_writes_aligned_mesh(synth_files, tmp_path):
    init, gt = synth_files
    mesh = tmp_path / "aligned.obj"
    assert main(["evaluate", "--pred", str(init), "--gt", str(gt), "--aligned-mesh", str(mesh)]) == EXIT_OK
    assert mesh.exists()


def test_optimize(synth_files, small_config, tmp_path, capsys):
    init, gt = synth_files
    out = tmp_path / "fit" / "scene.json"
    export = tmp_path / "meshes"
    capsys.readouterr()
    code = main(["--json", "optimize", "--scene", str(init), "--config", str(small_config), "--out", str(out),
                 "--export-meshes", str(export)])
    assert code == EXIT_OK
    payload = _json_out(capsys)
    assert payload["out"] == str(out)
    assert payload["trajectory"] == str(trajectory_path(out))
    assert set(payload["loss"]["terms"]) == {
        "body", "scene_reprojection", "scene_collision", "obj_ground", "body_ground", "contact", "body_penetration",
    }
    lines = trajectory_path(out).read_text().splitlines()
    assert {json.loads(line)["stage"] for line in lines} == {"stage1", "stage2"}
    assert (export / "manifest.json").exists()
    assert main(["evaluate", "--pred", str(out), "--gt", str(gt)]) == EXIT_OK


def test_optimize_disable_term(synth_files, small_config, tmp_path, capsys):
    init, _ = synth_files
    out = tmp_path / "scene.json"
    capsys.readouterr()
    code = main(["--json", "optimize", "--scene", str(init), "--config", str(small_config), "--out", str(out),
                 "--stage1-only", "--disable", "contact"])
    assert code == EXIT_OK
    lines = trajectory_path(out).read_text().splitlines()
    assert {json.loads(line)["stage"] for line in lines} == {"stage1"}


def test_optimize_is_deterministic(synth_files, small_config, tmp_path, capsys):
    init, _ = synth_files
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run / "scene.json"
        assert main(["optimize", "--scene", str(init), "--config", str(small_config), "--out", str(out)]) == EXIT_OK
        outputs.append((out.read_bytes(), trajectory_path(out).read_bytes()))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]


def test_gradcheck(synth_files, small_config, capsys):
    init, _ = synth_files
    capsys.readouterr()
    assert main(["--json", "gradcheck", "--scene", str(init), "--config", str(small_config)]) == EXIT_OK
    payload = _json_out(capsys)
    kinds = {(e["term"], e["kind"]) for e in payload["entries"]}
    assert ("pose_prior", "analytic") in kinds and ("bending_prior", "analytic") in kinds
    assert ("scene_reprojection", "fd") in kinds
    for entry in payload["entries"]:
        if entry["kind"] == "analytic":
            assert entry["max_rel_error"] < 1e-5


def test_missing_scene_is_invalid_input(tmp_path, capsys):
    code = main(["--json", "evaluate", "--pred", str(tmp_path / "a.json"), "--gt", str(tmp_path / "b.json")])
    assert code == EXIT_INVALID
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "IoError"


def test_out_of_range_matching_is_invalid_input(synth_files, tmp_path, capsys):
    _, gt = synth_files
    matching = tmp_path / "matching.json"
    matching.write_text(json.dumps([[0, 5]]))
    capsys.readouterr()
    code = main(["--json", "evaluate", "--pred", str(gt), "--gt", str(gt), "--matching", str(matching)])
    assert code == EXIT_INVALID
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "InvalidMatching"
    assert "(0, 5)" in error["message"]


def test_bad_config_is_invalid_input(synth_files, tmp_path, capsys):
    init, _ = synth_files
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"schedule": {"stage1_scene_iters": -1}}))
    code = main(["--json", "optimize", "--scene", str(init), "--config", str(config), "--out", str(tmp_path / "o.json")])
    assert code == EXIT_INVALID
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "SchemaError"
    assert "config.schedule.stage1_scene_iters" in error["message"]


@pytest.mark.parametrize("argv", [
    [],
    ["optimize", "--scene", "x.json"],
    ["optimize", "--scene", "x.json", "--out", "y.json", "--disable", "gravity"],
    ["synth", "--seed", "one", "--out-init", "a", "--out-gt", "b"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_INVALID


def test_batch_reports_failures(tmp_path, small_config, capsys):
    scenes = tmp_path / "scenes"
    scenes.mkdir()
    (scenes / "broken.json").write_text(json.dumps({"schema": "scenefit/1"}))
    capsys.readouterr()
    code = main(["--json", "optimize", "--scene-dir", str(scenes), "--out-dir", str(tmp_path / "out"),
                 "--config", str(small_config)])
    assert code == EXIT_FAILED
    results = _json_out(capsys)
    assert results[0]["status"] == "failed"
    assert results[0]["error"] == "SchemaError"


def test_parse_matching():
    assert parse_matching([[0, 1], [1, 0]]) == [(0, 1), (1, 0)]
    assert parse_matching({"pairs": [[2, 2]]}) == [(2, 2)]
    with pytest.raises(SchemaError) as info:
        parse_matching({"pairs": [["a", 0]]})
    assert info.value.field_path.startswith("matching.pairs")
