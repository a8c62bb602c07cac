import dataclasses
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from body import (
    BodyParams,
    bending_prior,
    body_forward,
    body_joints3d,
    default_template,
    load_template,
    pose_prior,
    posed_skeleton,
    save_template,
    self_penetration,
)
from body.model import axis_angle_to_matrix
from body.priors import bending_prior_gradient, pose_prior_gradient, segment_distances
from body.template import COCO_KEYPOINTS, sidecar_path
from optimizers.gradient import fd_step
from services.exceptions import BadJointIndex, SchemaError


@pytest.fixture(scope="module")
def template():
    return default_template()


def _posed(template, **changes):
    return BodyParams.neutral(template.joint_count).replace(**changes)


class TestTemplate:
    def test_default_template_shape(self, template):
        assert template.joint_count == 16
        assert template.keypoint_names == COCO_KEYPOINTS
        assert template.joint_regressor.shape == (17, len(template.mesh.vertices))
        assert_allclose(template.skinning_weights.sum(axis=1), 1.0)
        assert len(template.contact_vertex_indices) > 0

    def test_soles_touch_the_ground(self, template):
        assert template.mesh.vertices[:, 1].min() == pytest.approx(0.0, abs=1e-12)

    def test_bad_parent_rejected(self, template):
        parents = template.parents.copy()
        parents[3] = 7
        with pytest.raises(BadJointIndex):
            dataclasses.replace(template, parents=parents)

    def test_save_and_load(self, template, tmp_path):
        save_template(template, tmp_path / "body.obj")
        loaded = load_template(tmp_path / "body.obj")
        assert loaded.joint_names == template.joint_names
        assert loaded.bend_spec == template.bend_spec
        assert_allclose(loaded.mesh.vertices, template.mesh.vertices, atol=1e-12)
        assert_allclose(loaded.skinning_weights, template.skinning_weights)
        assert_allclose(loaded.joint_regressor, template.joint_regressor)
        assert np.array_equal(loaded.keypoint_map, template.keypoint_map)

    def test_load_rejects_other_schema(self, template, tmp_path):
        save_template(template, tmp_path / "body.obj")
        sidecar = sidecar_path(tmp_path / "body.obj")
        raw = json.loads(sidecar.read_text())
        raw["schema"] = "something-else/9"
        sidecar.write_text(json.dumps(raw))
        with pytest.raises(SchemaError):
            load_template(tmp_path / "body.obj")


class TestForward:
    def test_neutral_pose_reproduces_template(self, template):
        mesh = body_forward(template, BodyParams.neutral(template.joint_count))
        assert_allclose(mesh.vertices, template.mesh.vertices)

    def test_translation(self, template):
        offset = np.array([1.0, -0.5, 4.0])
        mesh = body_forward(template, BodyParams.neutral(template.joint_count, translation=offset))
        assert_allclose(mesh.vertices, template.mesh.vertices + offset)

    def test_global_half_turn(self, template):
        params = _posed(template, global_rotation=np.array([0.0, math.pi, 0.0]))
        mesh = body_forward(template, params)
        expected = template.mesh.vertices * np.array([-1.0, 1.0, -1.0])
        assert_allclose(mesh.vertices, expected, atol=1e-12)

    def test_elbow_flexion_moves_only_the_forearm(self, template):
        pose = np.zeros((template.joint_count, 3))
        elbow = template.joint_index("l_elbow")
        pose[elbow] = (math.pi / 2, 0.0, 0.0)
        joints = posed_skeleton(template, _posed(template, pose=pose))
        rest = template.rest_joints
        wrist = template.joint_index("l_wrist")
        assert_allclose(joints[wrist], [0.42, 1.2, -0.23], atol=1e-12)
        others = [j for j in range(template.joint_count) if j != wrist]
        assert_allclose(joints[others], rest[others], atol=1e-12)

    def test_keypoints_follow_the_skeleton(self, template, rng):
        pose = rng.normal(0.0, 0.3, size=(template.joint_count, 3))
        params = _posed(template, pose=pose, translation=np.array([0.3, 0.0, 3.0]),
                        global_rotation=np.array([0.0, 0.4, 0.0]))
        keypoints = body_joints3d(template, params)
        skeleton = posed_skeleton(template, params)
        for k, name in enumerate(COCO_KEYPOINTS):
            if name in template.joint_names:
                assert_allclose(keypoints[k], skeleton[template.joint_index(name)], atol=1e-9)

    def test_shape_scale_is_clamped(self, template):
        params = _posed(template, shape_scale=np.array([3.0, 1.0, 0.1]))
        assert_allclose(params.shape_scale, [2.0, 1.0, 0.5])

    def test_shape_scale_stretches_height(self, template):
        params = _posed(template, shape_scale=np.array([1.0, 1.1, 1.0]))
        mesh = body_forward(template, params)
        assert mesh.vertices[:, 1].max() == pytest.approx(1.1 * template.mesh.vertices[:, 1].max())

    def test_pose_length_must_match(self, template):
        with pytest.raises(ValueError):
            body_forward(template, BodyParams.neutral(template.joint_count - 1))

    def test_read_only_rotations(self):
        rotvec = np.array([[0.0, 0.0, math.pi / 2], [0.0, 0.0, 0.0]])
        rotvec.setflags(write=False)
        matrices = axis_angle_to_matrix(rotvec)
        assert_allclose(matrices[0] @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)
        assert_allclose(matrices[1], np.eye(3))


def _flatten(params: BodyParams) -> np.ndarray:
    return np.concatenate([params.translation, params.global_rotation, params.pose.ravel(), params.shape_scale])


def _unflatten(x: np.ndarray, joint_count: int) -> BodyParams:
    return BodyParams(translation=x[:3], global_rotation=x[3:6], pose=x[6:6 + 3 * joint_count],
                      shape_scale=x[6 + 3 * joint_count:])


def _vertex_jacobian(template, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    columns = []
    for i in range(len(x)):
        up, down = x.copy(), x.copy()
        up[i] += h[i]
        down[i] -= h[i]
        plus = body_forward(template, _unflatten(up, template.joint_count)).vertices
        minus = body_forward(template, _unflatten(down, template.joint_count)).vertices
        columns.append(((plus - minus) / (2.0 * h[i])).ravel())
    return np.stack(columns, axis=1)


class TestForwardJacobian:
    def test_engine_step_agrees_with_coarser_differences(self, template, rng):
        params = _posed(template, pose=rng.normal(0.0, 0.3, size=(template.joint_count, 3)),
                        translation=np.array([0.2, -0.5, 3.5]), global_rotation=np.array([0.1, 0.7, -0.2]),
                        shape_scale=np.array([1.05, 0.95, 1.1]))
        x = _flatten(params)
        engine = _vertex_jacobian(template, x, fd_step(x))
        coarse = _vertex_jacobian(template, x, np.full(len(x), 1e-5))
        relative = np.abs(engine - coarse) / np.maximum(1.0, np.maximum(np.abs(engine), np.abs(coarse)))
        assert relative.max() < 1e-4

    def test_translation_columns_are_identity(self, template):
        x = _flatten(BodyParams.neutral(template.joint_count, translation=(0.0, -0.5, 4.0)))
        jacobian = _vertex_jacobian(template, x, fd_step(x))
        n = len(template.mesh.vertices)
        for axis in range(3):
            expected = np.zeros((n, 3))
            expected[:, axis] = 1.0
            assert_allclose(jacobian[:, axis], expected.ravel(), atol=1e-8)


class TestPriors:
    def test_pose_prior_zero_at_rest(self, template):
        assert pose_prior(BodyParams.neutral(template.joint_count)) == 0.0

    def test_pose_prior_value_and_gradient(self, template, rng):
        pose = rng.normal(size=(template.joint_count, 3))
        params = _posed(template, pose=pose, shape_scale=np.array([1.2, 0.9, 1.0]))
        assert pose_prior(params) == pytest.approx(np.sum(pose**2) + 0.04 + 0.01)
        pose_grad, shape_grad = pose_prior_gradient(params)
        assert_allclose(pose_grad, 2 * pose)
        assert_allclose(shape_grad, [0.4, -0.2, 0.0], atol=1e-12)

    def test_bending_prior_at_rest(self, template):
        params = BodyParams.neutral(template.joint_count)
        assert bending_prior(params, template.bend_spec) == pytest.approx(len(template.bend_spec))

    def test_bending_prior_penalizes_hyperextension(self, template):
        elbow = template.joint_index("l_elbow")
        flexed = np.zeros((template.joint_count, 3))
        flexed[elbow, 0] = 1.0
        rest = BodyParams.neutral(template.joint_count)
        assert bending_prior(_posed(template, pose=flexed), template.bend_spec) < bending_prior(rest, template.bend_spec)
        assert bending_prior(_posed(template, pose=-flexed), template.bend_spec) > bending_prior(rest, template.bend_spec)

    def test_bending_prior_gradient(self, template, rng):
        pose = rng.normal(0.0, 0.5, size=(template.joint_count, 3))
        params = _posed(template, pose=pose)
        grad = bending_prior_gradient(params, template.bend_spec)
        h = 1e-6
        for joint, axis, _ in template.bend_spec:
            up, down = pose.copy(), pose.copy()
            up[joint, axis] += h
            down[joint, axis] -= h
            fd = (bending_prior(_posed(template, pose=up), template.bend_spec)
                  - bending_prior(_posed(template, pose=down), template.bend_spec)) / (2 * h)
            assert grad[joint, axis] == pytest.approx(fd, rel=1e-6)

    def test_bad_bend_joint(self, template):
        with pytest.raises(BadJointIndex):
            bending_prior(BodyParams.neutral(template.joint_count), [(99, 0, 1)])

    def test_rest_pose_is_penetration_free(self, template):
        assert self_penetration(template, BodyParams.neutral(template.joint_count)) == 0.0

    def test_fat_capsules_penetrate(self, template):
        fat = dataclasses.replace(template, capsule_radii=np.full(template.joint_count, 0.5))
        assert self_penetration(fat, BodyParams.neutral(fat.joint_count)) > 0.0


class TestSegmentDistances:
    def test_parallel_segments(self):
        d = segment_distances(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]]),
                              np.array([[0.0, 2, 0]]), np.array([[1.0, 2, 0]]))
        assert d[0] == pytest.approx(2.0)

    def test_crossing_segments(self):
        d = segment_distances(np.array([[-1.0, 0, 0]]), np.array([[1.0, 0, 0]]),
                              np.array([[0.0, -1, 0.5]]), np.array([[0.0, 1, 0.5]]))
        assert d[0] == pytest.approx(0.5)

    def test_endpoint_closest(self):
        d = segment_distances(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]]),
                              np.array([[3.0, 0, 0]]), np.array([[4.0, 1, 0]]))
        assert d[0] == pytest.approx(2.0)

    def test_degenerate_segment(self):
        d = segment_distances(np.array([[0.0, 0, 0]]), np.array([[0.0, 0, 0]]),
                              np.array([[0.0, 1, 0]]), np.array([[2.0, 1, 0]]))
        assert d[0] == pytest.approx(1.0)
