"""
Tests for the layered TransNN: forward pass, backpropagation, training and approximation
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from services import learning_service
from services.activation_service import ActivationKind, psi
from services.dynamics_service import step_general_info
from services.exceptions import DomainError, NumericalError, ValidationError
from services.learning_service import (
    ApproxConfig,
    Dataset,
    Gradients,
    LayeredTransNN,
    LossKind,
    OptimizerKind,
    OutputHead,
    TrainConfig,
    accuracy,
    approximation_ladder,
    build_approximator,
    build_model,
    compare_activations,
    fit_universal,
    forward,
    learning_rate_at,
    load_checkpoint,
    load_dataset,
    load_train_config,
    make_two_clusters,
    objective_and_gradients,
    save_checkpoint,
    save_history,
    save_ladder,
    train,
)


def random_model(rng, sizes, activation, head=OutputHead.IDENTITY):
    model = build_model(sizes, activation, head, seed=int(rng.integers(1000)))
    for k in range(model.depth):
        model.w[k] = rng.uniform(0.2, 0.8, size=model.w[k].shape)
        model.bias[k] = rng.uniform(-0.5, 1.0, size=model.bias[k].shape)
    return model


def regression_data(rng, d, m, count=12):
    return Dataset(rng.normal(size=(count, d)), rng.normal(size=(count, m)))


def finite_difference_check(model, data, loss, h=1e-6, tolerance=1e-5):
    _, grads = objective_and_gradients(model, data, loss)
    for group in ("a", "w", "bias"):
        for k in range(model.depth):
            if group == "w" and not model.w_trainable[k]:
                continue
            param = getattr(model, group)[k]
            grad = getattr(grads, group)[k]
            for idx in np.ndindex(param.shape):
                original = param[idx]
                param[idx] = original + h
                plus, _ = objective_and_gradients(model, data, loss)
                param[idx] = original - h
                minus, _ = objective_and_gradients(model, data, loss)
                param[idx] = original
                fd = (plus - minus) / (2 * h)
                scale = max(abs(grad[idx]), abs(fd), 1e-3)
                assert abs(grad[idx] - fd) / scale < tolerance, f"{group}[{k}]{idx}"


class TestForward:
    def test_full_pass_tlogsigmoid_is_linear(self, rng):
        model = build_model([3, 2], "psi", seed=1, w_init=1.0, bias_init=0.0)
        x = rng.normal(size=3)
        output, _ = forward(model, x)
        np.testing.assert_allclose(output, model.a[0] @ x, atol=1e-14)

    def test_single_layer_matches_scalar_loop(self, rng):
        model = random_model(rng, [3, 4], ActivationKind.TLOG_SIGMOID)
        x = rng.normal(size=3)
        expected = [sum(model.a[0][i, j] * psi(model.w[0][i, j], x[j]) for j in range(3)) + model.bias[0][i]
                    for i in range(4)]
        output, _ = forward(model, x)
        np.testing.assert_allclose(output, expected, rtol=1e-13)

    def test_matches_iterated_layer_step(self, rng):
        model = random_model(rng, [2, 5, 3, 1], ActivationKind.TSOFT_AFFINE)
        x = rng.normal(size=2)
        s = x
        for k in range(model.depth):
            s = step_general_info(model, s, k)
        np.testing.assert_allclose(forward(model, x)[0], s, rtol=1e-13)

    def test_batch_matches_single_rows(self, rng):
        model = random_model(rng, [2, 4, 2], ActivationKind.TLOG_SIGMOID)
        x = rng.normal(size=(5, 2))
        batch, _ = forward(model, x)
        for row, out in zip(x, batch):
            np.testing.assert_allclose(forward(model, row)[0], out, rtol=1e-14)

    def test_log_softmax_head_normalises(self, rng):
        model = random_model(rng, [2, 3], ActivationKind.TLOG_SIGMOID, OutputHead.LOG_SOFTMAX)
        output, _ = forward(model, rng.normal(size=(4, 2)))
        np.testing.assert_allclose(np.exp(output).sum(axis=1), np.ones(4), rtol=1e-12)

    def test_wrong_feature_count(self, rng):
        with pytest.raises(DomainError):
            forward(build_model([3, 1]), np.ones(2))

    def test_level_outside_unit_interval_names_layer(self):
        with pytest.raises(ValidationError) as info:
            LayeredTransNN(layer_sizes=[1, 1], a=[np.ones((1, 1))], w=[np.full((1, 1), 1.2)], bias=[np.zeros(1)])
        assert info.value.location == "w[0][0][0]"


class TestBackward:
    @pytest.mark.parametrize("activation", ["psi", "phi", "psi+"])
    def test_mse_gradients_match_finite_differences(self, rng, activation):
        for _ in range(20):
            model = random_model(rng, [2, 3, 3, 2], activation)
            finite_difference_check(model, regression_data(rng, 2, 2, count=6), LossKind.MSE)

    def test_nll_gradients_match_finite_differences(self, rng):
        model = random_model(rng, [2, 3, 2], ActivationKind.TLOG_SIGMOID, OutputHead.LOG_SOFTMAX)
        data = Dataset(rng.normal(size=(10, 2)), rng.integers(0, 2, size=10))
        finite_difference_check(model, data, LossKind.NLL)

    def test_probability_head_gradients(self, rng):
        model = random_model(rng, [2, 2, 1], ActivationKind.TLOG_SIGMOID, OutputHead.PROB)
        model.bias[1] = np.array([1.0])
        finite_difference_check(model, regression_data(rng, 2, 1), LossKind.MSE)

    def test_approximator_gradients(self, rng):
        model = build_approximator(rng.normal(size=(4, 1)), rng.uniform(0.2, 0.8, size=4),
                                   rng.normal(size=(1, 4)), b=1.0)
        finite_difference_check(model, regression_data(rng, 1, 1), LossKind.MSE)

    def test_zero_output_gradient(self, rng):
        model = random_model(rng, [2, 3, 1], ActivationKind.TLOG_SIGMOID)
        _, tape = forward(model, rng.normal(size=(3, 2)))
        grads = learning_service.backward(model, tape, np.zeros((3, 1)))
        for group in (grads.a, grads.w, grads.bias):
            for g in group:
                assert not np.any(g)

    def test_shards_sum_to_full_batch(self, rng):
        model = random_model(rng, [2, 4, 2], ActivationKind.TLOG_SIGMOID)
        data = regression_data(rng, 2, 2, count=30)
        one, g_one = objective_and_gradients(model, data, LossKind.MSE, workers=1)
        three, g_three = objective_and_gradients(model, data, LossKind.MSE, workers=3)
        assert three == pytest.approx(one, rel=1e-12)
        for mine, theirs in zip(g_one.a + g_one.w + g_one.bias, g_three.a + g_three.w + g_three.bias):
            np.testing.assert_allclose(theirs, mine, rtol=1e-10, atol=1e-14)

    def test_nll_needs_log_softmax(self, rng):
        model = random_model(rng, [2, 2], ActivationKind.TLOG_SIGMOID)
        with pytest.raises(ValidationError):
            objective_and_gradients(model, Dataset(np.ones((2, 2)), np.array([0, 1])), LossKind.NLL)


class TestTraining:
    def small_config(self, **overrides):
        settings = dict(layer_sizes=[2, 6, 2], epochs=5, batch_size=16, seed=3)
        settings.update(overrides)
        return TrainConfig(**settings)

    def test_zero_learning_rate_changes_nothing(self):
        data = make_two_clusters(n_per_class=20)
        cfg = self.small_config(learning_rate=0.0)
        model = build_model(cfg.layer_sizes, cfg.activation, cfg.head, seed=cfg.seed)
        trained, _ = train(model, data, cfg)
        assert trained.to_dict() == model.to_dict()

    def test_training_leaves_input_model_untouched(self):
        data = make_two_clusters(n_per_class=20)
        cfg = self.small_config()
        model = build_model(cfg.layer_sizes, cfg.activation, cfg.head, seed=cfg.seed)
        before = model.to_dict()
        train(model, data, cfg)
        assert model.to_dict() == before

    def test_levels_projected_into_unit_interval(self):
        data = make_two_clusters(n_per_class=20)
        cfg = self.small_config(optimizer=OptimizerKind.SGD, learning_rate=1.0, epochs=2)
        model = build_model(cfg.layer_sizes, cfg.activation, cfg.head, seed=cfg.seed)
        trained, _ = train(model, data, cfg)
        for w in trained.w:
            assert np.all((w >= 0.0) & (w <= 1.0))

    def test_same_seed_same_history(self):
        data = make_two_clusters(n_per_class=20)
        cfg = self.small_config(validation_fraction=0.25)
        model = build_model(cfg.layer_sizes, cfg.activation, cfg.head, seed=cfg.seed)
        _, first = train(model, data, cfg)
        _, second = train(model, data, cfg)
        assert first == second
        assert not math.isnan(first[-1].val_loss)

    def test_frozen_levels_stay_put(self):
        data = make_two_clusters(n_per_class=20)
        cfg = self.small_config(trainable=["a", "bias"])
        model = build_model(cfg.layer_sizes, cfg.activation, cfg.head, seed=cfg.seed, w_init=0.3)
        trained, _ = train(model, data, cfg)
        for w in trained.w:
            np.testing.assert_array_equal(w, np.full_like(w, 0.3))

    def test_regularizer_shrinks_weights(self):
        data = make_two_clusters(n_per_class=20)
        plain_cfg = self.small_config(optimizer=OptimizerKind.SGD, learning_rate=0.05, epochs=30)
        reg_cfg = plain_cfg.model_copy(update={"regularizer": 0.5})
        model = build_model(plain_cfg.layer_sizes, plain_cfg.activation, plain_cfg.head, seed=plain_cfg.seed)
        plain, _ = train(model, data, plain_cfg)
        regularized, _ = train(model, data, reg_cfg)
        norm = lambda m: sum(float(np.sum(a ** 2)) for a in m.a)  # noqa: E731
        assert norm(regularized) < norm(plain)

    def test_nan_loss_reports_epoch_and_batch(self, monkeypatch):
        data = make_two_clusters(n_per_class=10)
        cfg = self.small_config()
        model = build_model(cfg.layer_sizes, cfg.activation, cfg.head, seed=cfg.seed)
        monkeypatch.setattr(learning_service, "objective_and_gradients",
                            lambda m, *args, **kwargs: (math.nan, Gradients.zeros_like(m)))
        with pytest.raises(NumericalError) as info:
            train(model, data, cfg)
        assert info.value.where == {"epoch": 1, "batch": 0}

    def test_learning_rate_decay(self):
        cfg = self.small_config(learning_rate=0.1, decay_rate=0.5, decay_every=10)
        assert learning_rate_at(cfg, 1) == 0.1
        assert learning_rate_at(cfg, 10) == 0.1
        assert learning_rate_at(cfg, 11) == pytest.approx(0.05)

    @pytest.mark.slow
    @pytest.mark.parametrize("activation", ["tlogsigmoid", "tsoftaffine"])
    def test_two_clusters_are_separated(self, activation):
        data = make_two_clusters(seed=0)
        cfg = TrainConfig(activation=activation, epochs=300, seed=0)
        model = build_model(cfg.layer_sizes, cfg.activation, cfg.head, seed=cfg.seed)
        trained, _ = train(model, data, cfg)
        assert accuracy(trained, data) >= 0.98

    def test_comparison_has_one_column_per_variant(self, tmp_path):
        data = make_two_clusters(n_per_class=15)
        result = compare_activations(data, self.small_config(epochs=2))
        lines = result.save(tmp_path / "comparison.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0].split(",") == ["epoch", "TPsi", "TPhi", "fixed-Psi", "fixed-Phi", "relu-equivalent"]
        assert len(lines) == 3
        np.testing.assert_array_equal(result.models["relu-equivalent"].w[0], np.ones((6, 2)))

    def test_history_file(self, tmp_path):
        data = make_two_clusters(n_per_class=10)
        cfg = self.small_config(epochs=2)
        _, history = train(build_model(cfg.layer_sizes, cfg.activation, cfg.head), data, cfg)
        lines = save_history(history, tmp_path / "log.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        assert lines[2].startswith("2,")


class TestFiles:
    def test_checkpoint_round_trip(self, tmp_path, rng):
        model = random_model(rng, [2, 3, 2], ActivationKind.TSOFT_AFFINE, OutputHead.LOG_SOFTMAX)
        loaded = load_checkpoint(save_checkpoint(model, tmp_path / "model.json"))
        x = rng.normal(size=(4, 2))
        np.testing.assert_array_equal(forward(loaded, x)[0], forward(model, x)[0])

    def test_malformed_checkpoint(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"layer_sizes": [1, 1]}', encoding="utf-8")
        with pytest.raises(ValidationError):
            load_checkpoint(path)

    def test_sample_config_with_override(self, samples_dir):
        cfg = load_train_config(samples_dir / "train_config.json", seed=9, epochs=None)
        assert cfg.seed == 9
        assert cfg.epochs == 100
        assert cfg.trainable == ["a", "bias", "w"]

    def test_unknown_trainable_group(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"trainable": ["a", "gamma"]}', encoding="utf-8")
        with pytest.raises(ValidationError) as info:
            load_train_config(path)
        assert info.value.location == "trainable"

    def test_negative_learning_rate_rejected(self):
        with pytest.raises(PydanticValidationError):
            TrainConfig(learning_rate=-0.1)

    def test_csv_dataset(self, tmp_path):
        path = tmp_path / "points.csv"
        path.write_text("x1,x2,label\n0.5,1.0,0\n-0.5,2.0,1\n", encoding="utf-8")
        data = load_dataset(path)
        assert data.is_classification and len(data) == 2

    def test_csv_dataset_bad_row(self, tmp_path):
        path = tmp_path / "points.csv"
        path.write_text("x1,y1\n0.5,1.0\nabc,2.0\n", encoding="utf-8")
        with pytest.raises(ValidationError) as info:
            load_dataset(path)
        assert info.value.location == "points.csv:line 3"

    def test_builtin_dataset(self):
        data = load_dataset("two-clusters", seed=1)
        assert len(data) == 200
        assert set(data.targets.tolist()) == {0, 1}


class TestUniversalApproximation:
    def test_first_unit_is_constant(self):
        result = fit_universal("sin", 8)
        np.testing.assert_array_equal(result.model.a[0][0], [0.0])

    def test_sin_ladder_converges(self, tmp_path):
        results = approximation_ladder("sin", (8, 16, 32, 64))
        errors = [r.sup_error for r in results]
        assert all(later < earlier for earlier, later in zip(errors, errors[1:]))
        assert errors[-1] < 0.05
        assert results[-1].rounding_change < 1e-6
        lines = save_ladder(results, tmp_path / "ladder.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "width,sup_error,rational_sup_error,rounding_bound"
        assert len(lines) == 5

    def test_rounding_change_within_bound(self):
        result = fit_universal("gaussian-bump", 16)
        assert result.rounding_change <= result.rounding_bound + 1e-12

    def test_two_output_target(self):
        result = fit_universal("sin-cos", 16, ApproxConfig(grid_points=401))
        assert result.model.layer_sizes == [1, 16, 2]

    def test_same_seed_same_fit(self):
        first = fit_universal("sin", 8, ApproxConfig(seed=4))
        second = fit_universal("sin", 8, ApproxConfig(seed=4))
        assert first.sup_error == second.sup_error

    def test_refinement_never_hurts(self):
        plain = fit_universal("gaussian-bump", 8, ApproxConfig(grid_points=201))
        refined = fit_universal("gaussian-bump", 8, ApproxConfig(grid_points=201, refine_epochs=5))
        assert refined.sup_error <= plain.sup_error

    def test_zero_bias_rejected(self):
        with pytest.raises(DomainError):
            fit_universal("sin", 4, ApproxConfig(b=0.0))

    def test_plus_activation_needs_positive_bias(self):
        with pytest.raises(DomainError):
            build_approximator(np.ones((2, 1)), [0.5, 0.5], np.ones((1, 2)), b=-1.0, activation="psi+")

    def test_unknown_target(self):
        with pytest.raises(ValidationError):
            fit_universal("cosh", 4)

    def test_zero_width(self):
        with pytest.raises(DomainError):
            fit_universal("sin", 0)
