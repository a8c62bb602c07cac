import numpy as np
import pytest

from config import LossWeights, SynthSpec
from geometry import box_corners
from losses import loss_keypoint_reprojection, loss_obj_ground, loss_scene_reprojection
from services.exceptions import PlacementFailed
from services.synth import synth_scene


@pytest.fixture(scope="module")
def scene():
    return synth_scene(7)


def test_deterministic_per_seed(scene):
    again = synth_scene(7)
    for a, b in zip(scene.ground_truth.objects, again.ground_truth.objects):
        np.testing.assert_array_equal(a.box.centroid, b.box.centroid)
        np.testing.assert_array_equal(a.box.size, b.box.size)
        assert a.box.yaw == b.box.yaw
    np.testing.assert_array_equal(scene.ground_truth.body.params.translation, again.ground_truth.body.params.translation)


def test_seeds_differ(scene):
    other = synth_scene(8)
    assert not np.allclose(scene.ground_truth.objects[0].box.centroid, other.ground_truth.objects[0].box.centroid)


def test_ground_truth_is_consistent(scene):
    truth = scene.ground_truth
    weights = LossWeights()
    assert len(truth.objects) == 3
    assert loss_obj_ground(truth, weights) == pytest.approx(0.0, abs=1e-12)
    assert loss_scene_reprojection(truth, weights) == pytest.approx(0.0, abs=1e-12)
    assert loss_keypoint_reprojection(truth, weights) == pytest.approx(0.0, abs=1e-12)
    assert truth.body.mesh.vertices[:, 1].min() == pytest.approx(truth.floor_height)


def test_left_hand_rests_on_first_object(scene):
    truth = scene.ground_truth
    table = truth.objects[0].box
    assert table.yaw == 0.0
    corners = box_corners(table)
    template = truth.body.template
    contacts = truth.body.mesh.vertices[template.contact_vertex_indices]
    palm = contacts[contacts[:, 0] > truth.body.params.translation[0] + 0.3]
    assert palm[:, 1].min() == pytest.approx(corners[:, 1].max())
    assert palm[:, 0].min() == pytest.approx(corners[:, 0].min())


def test_unperturbed_initial_matches_truth(scene):
    for a, b in zip(scene.initial.objects, scene.ground_truth.objects):
        np.testing.assert_array_equal(a.box.centroid, b.box.centroid)


def test_perturbation():
    spec = SynthSpec(centroid_sigma=0.2, yaw_sigma=0.1, body_translation_sigma=0.1)
    generated = synth_scene(3, spec)
    moved = [
        not np.allclose(a.box.centroid, b.box.centroid)
        for a, b in zip(generated.initial.objects, generated.ground_truth.objects)
    ]
    assert all(moved)
    assert not np.allclose(generated.initial.body.params.translation, generated.ground_truth.body.params.translation)
    for a, b in zip(generated.initial.objects, generated.ground_truth.objects):
        assert a.detection == b.detection


def test_without_human():
    generated = synth_scene(5, SynthSpec(human=False, object_count=2, mesh_kind="icosphere"))
    assert generated.ground_truth.body is None
    assert generated.ground_truth.keypoints_2d is None
    assert [o.label for o in generated.ground_truth.objects] == ["icosphere_0", "icosphere_1"]


def test_writes_meshes(tmp_path):
    generated = synth_scene(2, SynthSpec(object_count=2), mesh_dir=tmp_path)
    paths = [o.mesh_path for o in generated.ground_truth.objects]
    assert all(p is not None for p in paths)
    assert (tmp_path / "object_0.obj").exists()


def test_crowded_room_fails():
    spec = SynthSpec(room_width=(1.0, 1.0), object_size=(0.9, 1.0), human=False, object_count=2)
    with pytest.raises(PlacementFailed) as info:
        synth_scene(0, spec)
    assert info.value.what == "object 0"
