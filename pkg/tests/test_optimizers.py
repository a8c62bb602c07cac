import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from config import LossWeights
from losses import loss_total
from optimizers import (
    LBFGS,
    Adam,
    AdamState,
    FreezeMask,
    Objective,
    adam_step,
    central_difference,
    forward_difference,
    get_available_optimizer_names,
    get_optimizer,
    pack,
    step_scales,
    unpack,
)
from optimizers.lbfgs import LBFGSHistory, lbfgs_step
from services.exceptions import LineSearchFailed, NonFiniteLoss

FLOOR = -0.5


def _sum_of_squares(x):
    return float(np.sum(x**2))


def _rosenbrock(x):
    return float((1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2)


def _rosenbrock_grad(x):
    return np.array([
        -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
        200.0 * (x[1] - x[0] ** 2),
    ])


class TestParams:
    def test_roundtrip_reuses_everything(self, make_scene, on_floor):
        state = make_scene([on_floor(0.0, 4.0), on_floor(1.5, 5.0)], body_translation=(0.0, FLOOR, 4.0))
        restored = unpack(state, pack(state))
        assert restored.objects is state.objects
        assert restored.body is state.body
        assert restored.layout is state.layout
        assert restored.camera is state.camera

    def test_layout_names_and_kinds(self, make_scene, on_floor):
        state = make_scene([on_floor(0.0, 4.0)], body_translation=(0.0, FLOOR, 4.0))
        vector = pack(state)
        names = vector.entry_names()
        assert names[:3] == ["camera.pitch", "camera.roll", "objects[0].centroid[0]"]
        assert len(names) == len(vector)
        joints = state.body.template.joint_count
        assert vector.part("body.pose").size == 3 * joints
        assert vector.kinds()[0] == "angle"
        assert vector.part("objects[0].size").kind == "length"

    def test_unpack_changes_only_touched_parts(self, make_scene, on_floor):
        state = make_scene([on_floor(0.0, 4.0), on_floor(1.5, 5.0)], body_translation=(0.0, FLOOR, 4.0)).rebuild_sdfs()
        vector = pack(state)
        values = vector.values.copy()
        part = vector.part("objects[1].centroid")
        values[part.start + 1] += 0.25
        moved = unpack(state, vector.with_values(values))
        assert moved.objects[0] is state.objects[0]
        assert moved.body is state.body
        assert moved.objects[1].box.centroid[1] == pytest.approx(state.objects[1].box.centroid[1] + 0.25)
        assert moved.scene_sdf is state.scene_sdf

    def test_sizes_are_floored(self, make_scene, on_floor):
        state = make_scene([on_floor(0.0, 4.0)])
        vector = pack(state)
        values = vector.values.copy()
        part = vector.part("objects[0].size")
        values[part.start] = -1.0
        assert unpack(state, vector.with_values(values)).objects[0].box.size[0] > 0.0

    def test_freeze_mask(self, make_scene, on_floor):
        vector = pack(make_scene([on_floor(0.0, 4.0)]))
        mask = FreezeMask.train_only(vector.layout, lambda name: name.endswith(".centroid"))
        trainable = mask.trainable(vector.layout)
        assert trainable.sum() == 6
        assert not trainable[vector.part("objects[0].yaw").start]

    def test_step_scales(self, make_scene, on_floor):
        vector = pack(make_scene([on_floor(0.0, 4.0)], body_translation=(0.0, FLOOR, 4.0)))
        scales = step_scales(vector, 500.0, 50.0)
        assert scales[vector.part("objects[0].centroid").start] == 500.0
        assert scales[vector.part("camera.pitch").start] == 50.0
        assert scales[vector.part("body.shape_scale").start] == 1.0

    def test_layout_must_cover_values(self, make_scene, on_floor):
        vector = pack(make_scene([on_floor(0.0, 4.0)]))
        with pytest.raises(ValueError):
            vector.with_values(np.zeros(len(vector) + 1))


class TestGradient:
    def test_quadratic(self):
        assert_allclose(central_difference(_sum_of_squares, np.array([1.0, 2.0])), [2.0, 4.0], atol=1e-6)

    def test_frozen_entries_are_zero(self):
        grad = central_difference(_sum_of_squares, np.array([1.0, 2.0, 3.0]), trainable=np.array([True, False, True]))
        assert grad[1] == 0.0
        assert_allclose(grad[[0, 2]], [2.0, 6.0], atol=1e-6)
        assert_array_equal(central_difference(_sum_of_squares, np.ones(3), trainable=np.zeros(3, bool)), np.zeros(3))

    def test_threaded_matches_serial(self, rng):
        x = rng.normal(size=12)
        serial = central_difference(_rosenbrock_like, x)
        assert_array_equal(central_difference(_rosenbrock_like, x, workers=4), serial)

    def test_non_finite_names_parameter(self):
        def blows_up(x):
            return np.inf if x[1] > 1.0 else float(x[1])

        with pytest.raises(NonFiniteLoss) as exc:
            central_difference(blows_up, np.array([0.0, 1.0]), names=["a", "b"])
        assert exc.value.parameter == "b"

    def test_objective_masks_analytic_gradient(self):
        objective = Objective(_rosenbrock, trainable=np.array([False, True]), grad_fn=_rosenbrock_grad)
        grad = objective.gradient(np.array([-1.2, 1.0]))
        assert grad[0] == 0.0
        assert grad[1] == pytest.approx(_rosenbrock_grad(np.array([-1.2, 1.0]))[1])

    def test_objective_rejects_non_finite(self):
        with pytest.raises(NonFiniteLoss):
            Objective(lambda x: float("nan")).value(np.zeros(2))

    def test_scene_gradient_agrees_with_one_sided_differences(self, make_scene, on_floor):
        truth = make_scene([on_floor(0.0, 4.0), on_floor(1.8, 5.0, yaw=0.3)])
        moved = tuple(
            o.with_box(o.box.replace(centroid=o.box.centroid + [0.1, 0.15, -0.2], size=o.box.size * 1.1))
            for o in truth.objects
        )
        state = truth.replace(objects=moved)
        vector = pack(state)
        mask = FreezeMask.train_only(vector.layout, lambda name: name.startswith("objects")).trainable(vector.layout)
        weights = LossWeights()

        def loss(x):
            return loss_total(unpack(state, vector.with_values(x)), weights).total

        central = central_difference(loss, vector.values, mask)
        one_sided = forward_difference(loss, vector.values, mask, h=1e-7)
        assert np.linalg.norm(central - one_sided) <= 1e-3 * np.linalg.norm(central)


def _rosenbrock_like(x):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


class TestAdam:
    def test_first_step_closed_form(self):
        x = np.array([1.0, -2.0, 3.0])
        grad = np.array([0.5, -4.0, 1e-3])
        x_new, state = adam_step(AdamState.zeros(3), x, grad, lr=0.01)
        assert_allclose(x_new, x - 0.01 * grad / (np.abs(grad) + 1e-8))
        assert state.t == 1

    def test_zero_gradient_is_identity(self):
        x = np.array([1.0, -2.0])
        x_new, _ = adam_step(AdamState.zeros(2), x, np.zeros(2), lr=0.1)
        assert_array_equal(x_new, x)

    def test_weight_decay_shrinks(self):
        x = np.array([2.0])
        x_new, _ = adam_step(AdamState.zeros(1), x, np.zeros(1), lr=0.1, weight_decay=0.5)
        assert_allclose(x_new, [2.0 * (1 - 0.05)])

    def test_scale_multiplies_the_step(self):
        x = np.zeros(2)
        x_new, _ = adam_step(AdamState.zeros(2), x, np.array([1.0, 1.0]), lr=0.01, scale=np.array([1.0, 100.0]))
        assert_allclose(x_new, [-0.01, -1.0], rtol=1e-6)

    def test_mask_keeps_frozen_entries(self):
        x = np.array([1.0, 2.0])
        x_new, _ = adam_step(AdamState.zeros(2), x, np.array([1.0, 1.0]), lr=0.1, weight_decay=0.1,
                             mask=np.array([True, False]))
        assert x_new[1] == 2.0
        assert x_new[0] != 1.0

    def test_converges_on_quadratic(self):
        objective = Objective(_sum_of_squares, grad_fn=lambda x: 2.0 * x)
        result = Adam(lr=0.1).run(np.array([5.0, -3.0]), objective, iterations=500)
        assert np.linalg.norm(result.x) < 1e-2
        assert result.loss <= result.initial_loss

    def test_run_returns_best_iterate(self):
        objective = Objective(_sum_of_squares, grad_fn=lambda x: 2.0 * x)
        result = Adam(lr=0.1).run(np.array([0.05]), objective, iterations=30)
        assert result.loss == min([result.initial_loss] + [h.loss for h in result.history])

    def test_run_can_commit_a_rising_step(self):
        # Starting at the minimum, the first Adam step can only go uphill.
        objective = Objective(lambda x: float(np.sum(np.abs(x))), grad_fn=lambda x: np.sign(x) + (x == 0.0))
        result = Adam(lr=0.1).run(np.array([0.0]), objective, iterations=1, keep_best=False)
        assert result.x[0] != 0.0
        assert result.loss > result.initial_loss
        best = Adam(lr=0.1).run(np.array([0.0]), objective, iterations=1)
        assert best.x[0] == 0.0


class TestLBFGS:
    def test_quadratic(self):
        D = np.array([1.0, 2.0, 3.0, 4.0])
        objective = Objective(lambda x: float(0.5 * np.sum(D * x**2)), grad_fn=lambda x: D * x)
        optimizer = LBFGS(lr=1.0, tolerance_grad=1e-12, tolerance_change=0.0)
        result = optimizer.run(np.ones(4), objective, iterations=40)
        assert np.linalg.norm(result.x) < 1e-10

    def test_rosenbrock(self):
        objective = Objective(_rosenbrock, grad_fn=_rosenbrock_grad)
        optimizer = LBFGS(lr=1.0, tolerance_grad=1e-12, tolerance_change=0.0)
        result = optimizer.run(np.array([-1.2, 1.0]), objective, iterations=200)
        assert_allclose(result.x, [1.0, 1.0], atol=1e-6)

    def test_rosenbrock_with_finite_differences(self):
        optimizer = LBFGS(lr=1.0, tolerance_grad=1e-9, tolerance_change=0.0)
        result = optimizer.run(np.array([-1.2, 1.0]), Objective(_rosenbrock), iterations=200)
        assert_allclose(result.x, [1.0, 1.0], atol=1e-4)

    def test_losses_never_increase(self):
        objective = Objective(_rosenbrock, grad_fn=_rosenbrock_grad)
        result = LBFGS(lr=1.0).run(np.array([-1.2, 1.0]), objective, iterations=50)
        losses = [result.initial_loss] + [h.loss for h in result.history]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_frozen_entries_never_change(self):
        x0 = np.array([-1.2, 1.0, 0.3, 0.7])
        objective = Objective(_rosenbrock_like, trainable=np.array([True, True, False, True]))
        result = LBFGS(lr=1.0).run(x0, objective, iterations=25)
        assert result.x[2] == x0[2]
        assert result.loss < result.initial_loss

    def test_converged_at_stationary_point(self):
        objective = Objective(_sum_of_squares, grad_fn=lambda x: 2.0 * x)
        step = lbfgs_step(LBFGSHistory(), np.zeros(3), objective, lr=1.0)
        assert step.converged
        assert_array_equal(step.x, np.zeros(3))

    def test_line_search_failure(self):
        objective = Objective(lambda x: 1.0, grad_fn=lambda x: np.ones_like(x))
        with pytest.raises(LineSearchFailed):
            lbfgs_step(LBFGSHistory(), np.zeros(2), objective, lr=1.0)

    def test_history_window(self):
        history = LBFGSHistory(size=2)
        for k in range(1, 5):
            assert history.push(np.array([k, 0.0]), np.array([k, 0.0]))
        assert len(history.s) == 2
        assert not history.push(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))


class TestFactory:
    def test_names(self):
        assert get_available_optimizer_names() == ["adam", "lbfgs"]

    def test_builds_fresh_instances(self):
        a, b = get_optimizer("LBFGS", lr=1e-3), get_optimizer("lbfgs", lr=1e-3)
        assert isinstance(a, LBFGS) and a is not b
        assert isinstance(get_optimizer("adam", lr=1e-4, weight_decay=1e-4), Adam)

    def test_unknown(self):
        with pytest.raises(ValueError):
            get_optimizer("sgd", lr=0.1)

    def test_learning_rate_must_be_positive(self):
        with pytest.raises(ValueError):
            Adam(lr=0.0)
