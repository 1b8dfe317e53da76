import numpy as np
import pytest

from mcn.errors import ConfigurationError, DimensionError, TrainingDivergenceError
from mcn.gradcheck import check_layer, run_suite
from mcn.numerics import (
    ModelParams,
    grad_check,
    linear_backward,
    linear_forward,
    lstm_forward,
    lstm_step,
    relative_error,
    relu,
    relu_backward,
    sgd_step,
)


class TestLinear:

    def test_batch_matches_rows(self, rng):
        W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
        x = rng.normal(size=(5, 4))
        batch = linear_forward(W, b, x)
        for i in range(5):
            np.testing.assert_allclose(batch[i], linear_forward(W, b, x[i]))

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError, match="Линейный слой"):
            linear_forward(rng.normal(size=(3, 4)), np.zeros(3), np.zeros(5))

    def test_backward_sums_over_batch(self, rng):
        W, b = rng.normal(size=(2, 3)), rng.normal(size=2)
        x, up = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        grads = linear_backward(W, b, x, up)
        single = [linear_backward(W, b, x[i], up[i]) for i in range(4)]
        np.testing.assert_allclose(grads.params["W"], sum(g.params["W"] for g in single))
        np.testing.assert_allclose(grads.params["b"], up.sum(axis=0))
        np.testing.assert_allclose(grads.input, up @ W)


class TestRelu:

    def test_zero_gradient_at_zero(self):
        x = np.array([-1.0, 0.0, 2.0])
        assert relu(x).tolist() == [0.0, 0.0, 2.0]
        assert relu_backward(x, np.ones(3)).tolist() == [0.0, 0.0, 1.0]


class TestLSTM:

    def test_zero_weights_give_zero_state(self):
        W, b = np.zeros((8, 5)), np.zeros(8)
        h, c, _ = lstm_step(W, b, np.ones(3), np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(h, 0.0)
        np.testing.assert_array_equal(c, 0.0)

    def test_padding_keeps_last_real_state(self, rng):
        W, b = rng.uniform(-0.5, 0.5, size=(12, 5)), rng.uniform(-0.5, 0.5, size=12)
        xs = rng.normal(size=(5, 2, 2))
        mask = np.ones((5, 2))
        mask[3:, 1] = 0.0

        h_batch, _ = lstm_forward(W, b, xs, mask)
        h_short, _ = lstm_forward(W, b, xs[:3, 1:2])
        h_long, _ = lstm_forward(W, b, xs[:, 0:1])
        np.testing.assert_allclose(h_batch[1], h_short[0])
        np.testing.assert_allclose(h_batch[0], h_long[0])

    def test_bad_input_rank(self):
        with pytest.raises(DimensionError, match="ожидается вход"):
            lstm_forward(np.zeros((8, 4)), np.zeros(8), np.zeros((3, 2)))


class TestSGD:

    def test_frozen_and_immutability(self):
        params = ModelParams({"w": np.ones(2), "e": np.ones(2)}, frozen={"e"})
        updated = sgd_step(params, {"w": np.ones(2), "e": np.ones(2)}, learning_rate=0.5)
        np.testing.assert_array_equal(updated["w"], [0.5, 0.5])
        np.testing.assert_array_equal(updated["e"], [1.0, 1.0])
        np.testing.assert_array_equal(params["w"], [1.0, 1.0])

    def test_non_finite_gradient(self):
        params = ModelParams({"w": np.ones(2)})
        with pytest.raises(TrainingDivergenceError, match="'w'"):
            sgd_step(params, {"w": np.array([1.0, np.nan])}, learning_rate=0.1)

    def test_negative_learning_rate(self):
        params = ModelParams({"w": np.ones(2)})
        with pytest.raises(ConfigurationError, match="learning_rate"):
            sgd_step(params, {"w": np.ones(2)}, learning_rate=-0.1)


class TestGradCheck:

    def test_relative_error_floor(self):
        assert relative_error(0.0, 1e-9) == 0.0
        assert relative_error(1.0, 1.0) == 0.0
        assert relative_error(2.0, 1.0) == pytest.approx(1 / 3)

    def test_quadratic(self):
        params = ModelParams({"x": np.array([1.0, -2.0, 3.0])})
        report = grad_check(lambda p: (float(np.sum(p["x"] ** 2)), {"x": 2 * p["x"]}), params)
        assert report.passed
        assert report.checked == 3

    def test_wrong_gradient_reported(self):
        params = ModelParams({"x": np.array([1.0, 2.0])})
        report = grad_check(lambda p: (float(np.sum(p["x"] ** 2)), {"x": p["x"]}), params)
        assert not report.passed
        assert report.worst[0].error == pytest.approx(1 / 3)

    def test_roundoff_noise_tolerated(self):
        # крупная константа в лоссе: разность несёт шум ~1e-8, настоящий градиент 1e-9
        params = ModelParams({"x": np.array([0.3, -0.7])})
        report = grad_check(lambda p: (1e3 + 1e-9 * float(np.sum(p["x"])), {"x": np.full(2, 1e-9)}), params)
        assert report.passed

    def test_error_above_noise_still_fails(self):
        params = ModelParams({"x": np.array([0.3, -0.7])})
        report = grad_check(lambda p: (1e3 + 1e-9 * float(np.sum(p["x"])), {"x": np.full(2, 1e-3)}), params)
        assert not report.passed

    def test_default_suite_passes(self):
        results = run_suite()
        failed = [(r.layer, r.report.max_error) for r in results if not r.passed]
        assert not failed
        assert {r.layer for r in results} == {
            "linear", "relu", "lstm", "visual_branch", "sentence_encoder", "full_loss",
        }

    def test_full_loss_language_tensors_pass(self):
        result = check_layer("full_loss", instances=5, seed=5)
        assert result.passed, result.report.worst
        assert any(name.startswith("language.") for name in result.report.per_tensor)

    def test_corrupted_gradients_fail(self):
        results = run_suite(instances=3, full_loss_instances=1, corrupt_scale=2.0)
        assert not any(r.passed for r in results)
        assert all(r.report.max_error == pytest.approx(1 / 3, rel=1e-3) for r in results)
