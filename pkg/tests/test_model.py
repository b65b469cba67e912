import math

import numpy as np
import pytest

from fedclust.model import (
    HIDDEN_UNITS,
    ModelParams,
    TrainConfig,
    evaluate_f1,
    forward,
    init_mlp,
    load_params,
    loss_and_grads,
    mean_cross_entropy,
    params_equal,
    save_params,
    train_local,
)


def zero_params(input_dim, classes):
    return ModelParams(
        W1=np.zeros((input_dim, HIDDEN_UNITS)),
        b1=np.zeros(HIDDEN_UNITS),
        W2=np.zeros((HIDDEN_UNITS, classes)),
        b2=np.zeros(classes),
    )


def routing_params(classes, gain=4.0):
    """Params that steer a scaled one-hot input row to its own class."""
    W1 = np.zeros((classes, HIDDEN_UNITS))
    W1[np.arange(classes), np.arange(classes)] = gain
    W2 = np.zeros((HIDDEN_UNITS, classes))
    W2[np.arange(classes), np.arange(classes)] = gain
    return ModelParams(W1=W1, b1=np.zeros(HIDDEN_UNITS), W2=W2, b2=np.zeros(classes))


def one_hot_rows(targets, classes):
    rows = np.zeros((len(targets), classes))
    rows[np.arange(len(targets)), targets] = 1.0
    return rows


def separable_two_class(n=200, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    features = rng.normal(size=(n, 3)) + 4.0 * np.stack(
        [labels, -labels.astype(float), np.zeros(n)], axis=1
    )
    return features, labels


class TestInit:
    def test_deterministic(self):
        assert params_equal(init_mlp(7, 4, seed=3), init_mlp(7, 4, seed=3))
        assert not params_equal(init_mlp(7, 4, seed=3), init_mlp(7, 4, seed=4))

    def test_shapes_and_zero_biases(self):
        params = init_mlp(5, 3, seed=0)
        assert params.W1.shape == (5, HIDDEN_UNITS)
        assert params.W2.shape == (HIDDEN_UNITS, 3)
        assert np.all(params.b1 == 0.0) and np.all(params.b2 == 0.0)

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            init_mlp(0, 3, seed=0)
        with pytest.raises(ValueError):
            init_mlp(3, 1, seed=0)


class TestForward:
    def test_rows_are_distributions(self):
        params = init_mlp(6, 5, seed=1)
        probs = forward(params, np.random.default_rng(0).normal(size=(40, 6)))
        assert probs.shape == (40, 5)
        assert np.all(probs > 0.0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_params_give_uniform(self):
        probs = forward(zero_params(4, 5), np.ones((3, 4)))
        np.testing.assert_array_equal(probs, np.full((3, 5), 1.0 / 5.0))

    def test_logit_shift_invariance(self):
        params = init_mlp(4, 3, seed=2)
        shifted = ModelParams(params.W1, params.b1, params.W2, params.b2 + 123.456)
        x = np.random.default_rng(1).normal(size=(10, 4))
        np.testing.assert_allclose(forward(params, x), forward(shifted, x), atol=1e-12)

    def test_no_overflow_on_huge_logits(self):
        params = init_mlp(4, 3, seed=2)
        probs = forward(params, 1e6 * np.ones((2, 4)))
        assert np.all(np.isfinite(probs))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(init_mlp(4, 3, seed=0), np.ones((2, 5)))


class TestLossAndGrads:
    def test_uniform_predictions_give_log_k(self):
        for classes in (2, 5, 10):
            loss, _ = loss_and_grads(
                zero_params(3, classes), np.ones((6, 3)), np.zeros(6, dtype=int)
            )
            assert loss == pytest.approx(math.log(classes), abs=1e-12)

    def test_perfect_predictions_drive_loss_to_zero(self):
        classes = 4
        targets = np.array([0, 1, 2, 3, 1, 2])
        params = routing_params(classes, gain=40.0)
        loss, _ = loss_and_grads(params, one_hot_rows(targets, classes), targets)
        assert loss < 1e-6

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        features = rng.normal(size=(5, 3))
        labels = rng.integers(0, 3, 5)
        params = init_mlp(3, 3, seed=7)
        _, grads = loss_and_grads(params, features, labels)
        step = 1e-5
        for key in ("W1", "b1", "W2", "b2"):
            tensor = params.tensors()[key]
            grad = grads.tensors()[key]
            for index in np.ndindex(tensor.shape):
                for sign, store in ((+1, "plus"), (-1, "minus")):
                    bumped = {k: v.copy() for k, v in params.tensors().items()}
                    bumped[key][index] += sign * step
                    loss = loss_and_grads(ModelParams(**bumped), features, labels)[0]
                    if store == "plus":
                        loss_plus = loss
                    else:
                        loss_minus = loss
                numeric = (loss_plus - loss_minus) / (2 * step)
                denom = max(abs(numeric), 1e-8)
                assert abs(grad[index] - numeric) / denom < 1e-4

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ValueError):
            loss_and_grads(init_mlp(3, 3, seed=0), np.ones((2, 3)), np.array([0, 3]))


class TestTrainLocal:
    def test_zero_epochs_is_identity(self):
        params = init_mlp(3, 2, seed=0)
        features, labels = separable_two_class()
        after = train_local(params, features, labels, TrainConfig(batch_size=32), epochs=0)
        assert params_equal(params, after)

    def test_loss_decreases_on_separable_data(self):
        features, labels = separable_two_class()
        config = TrainConfig(batch_size=32, seed=1)
        params = init_mlp(3, 2, seed=1)
        losses = [mean_cross_entropy(params, features, labels)]
        current = params
        for _ in range(3):
            current = train_local(current, features, labels, config, epochs=1)
            losses.append(mean_cross_entropy(current, features, labels))
        assert losses[1] < losses[0] and losses[2] < losses[1] and losses[3] < losses[2]

    def test_deterministic_bit_for_bit(self):
        features, labels = separable_two_class(seed=4)
        config = TrainConfig(batch_size=64, seed=9)
        a = train_local(init_mlp(3, 2, seed=2), features, labels, config, epochs=2)
        b = train_local(init_mlp(3, 2, seed=2), features, labels, config, epochs=2)
        assert params_equal(a, b)

    def test_seed_override_changes_trajectory(self):
        features, labels = separable_two_class(seed=4)
        config = TrainConfig(batch_size=16, seed=9)
        base = init_mlp(3, 2, seed=2)
        a = train_local(base, features, labels, config, epochs=1)
        b = train_local(base, features, labels, config, epochs=1, seed=123)
        assert not params_equal(a, b)

    def test_rejects_epochs_beyond_cap(self):
        features, labels = separable_two_class()
        with pytest.raises(ValueError):
            train_local(
                init_mlp(3, 2, seed=0), features, labels, TrainConfig(max_epochs=5), epochs=6
            )

    def test_rejects_empty_split(self):
        with pytest.raises(ValueError):
            train_local(
                init_mlp(3, 2, seed=0),
                np.empty((0, 3)),
                np.empty(0, dtype=int),
                TrainConfig(),
                epochs=1,
            )


class TestEvaluateF1:
    def test_perfect_predictions(self):
        classes = 3
        targets = np.array([0, 1, 2, 0, 1, 2])
        params = routing_params(classes)
        assert evaluate_f1(params, one_hot_rows(targets, classes), targets) == 1.0

    def test_constant_wrong_predictor_scores_zero(self):
        params = zero_params(2, 3)
        params.b2[2] += 5.0  # always predict class 2
        features = np.ones((8, 2))
        labels = np.array([0, 0, 1, 1, 0, 1, 0, 1])  # class 2 absent
        assert evaluate_f1(params, features, labels) == 0.0

    def test_hand_computed_confusion_matrix(self):
        # truth: 0,0,0,1,1,1  predictions: 0,0,1,0,1,1
        # class 0: TP=2 FP=1 FN=1 -> F1 = 2/3; class 1 symmetric -> macro 2/3
        classes = 2
        truth = np.array([0, 0, 0, 1, 1, 1])
        predicted = np.array([0, 0, 1, 0, 1, 1])
        params = routing_params(classes)
        score = evaluate_f1(params, one_hot_rows(predicted, classes), truth)
        assert score == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_zero_support_classes_excluded(self):
        classes = 4
        truth = np.array([0, 0, 1, 1])
        predicted = np.array([0, 0, 1, 0])
        params = routing_params(classes)
        # class 0: TP=2 FP=1 FN=0 -> 0.8; class 1: TP=1 FP=0 FN=1 -> 2/3
        score = evaluate_f1(params, one_hot_rows(predicted, classes), truth)
        assert score == pytest.approx((0.8 + 2.0 / 3.0) / 2, abs=1e-12)

    def test_weighted_averaging(self):
        classes = 2
        truth = np.array([0, 0, 0, 0, 0, 0, 1, 1])
        predicted = np.array([0, 0, 0, 0, 0, 1, 1, 0])
        params = routing_params(classes)
        x = one_hot_rows(predicted, classes)
        # class 0: TP=5 FP=1 FN=1 -> 5/6; class 1: TP=1 FP=1 FN=1 -> 0.5
        macro = evaluate_f1(params, x, truth, "macro")
        weighted = evaluate_f1(params, x, truth, "weighted")
        assert macro == pytest.approx((5 / 6 + 0.5) / 2, abs=1e-12)
        assert weighted == pytest.approx((6 * (5 / 6) + 2 * 0.5) / 8, abs=1e-12)

    def test_class_relabeling_invariance(self):
        rng = np.random.default_rng(55)
        classes = 4
        truth = rng.integers(0, classes, 60)
        predicted = rng.integers(0, classes, 60)
        params = routing_params(classes)
        baseline = evaluate_f1(params, one_hot_rows(predicted, classes), truth)
        perm = rng.permutation(classes)
        relabeled = evaluate_f1(
            params, one_hot_rows(perm[predicted], classes), perm[truth]
        )
        assert relabeled == pytest.approx(baseline, abs=1e-12)

    def test_rejects_empty_split(self):
        with pytest.raises(ValueError):
            evaluate_f1(init_mlp(2, 2, seed=0), np.empty((0, 2)), np.empty(0, dtype=int))

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            evaluate_f1(init_mlp(2, 2, seed=0), np.ones((1, 2)), np.zeros(1, dtype=int), "micro")


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        params = init_mlp(6, 4, seed=12)
        path = tmp_path / "params.json"
        save_params(params, path)
        assert params_equal(load_params(path), params)

    def test_identical_params_seriali_to_identical_bytes(self, tmp_path):
        params = init_mlp(6, 4, seed=12)
        save_params(params, tmp_path / "a.json")
        save_params(params, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            load_params(path)
