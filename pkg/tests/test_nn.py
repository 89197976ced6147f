"""Dense network engine: forward/backward contracts and the gradient oracle."""

import numpy as np
import pytest

from feddisk import nn
from feddisk.errors import ConfigError, NumericError, ShapeError


def random_net(rng, dims, activations, loss_kind, mask_prob=0.0):
    layers = []
    for i in range(len(dims) - 1):
        mask = None
        if mask_prob > 0.0:
            mask = (rng.uniform(size=(dims[i + 1], dims[i])) >= mask_prob).astype(float)
        layers.append(nn.glorot_layer(dims[i], dims[i + 1], activations[i], rng, mask=mask))
    return nn.Network(layers, loss_kind=loss_kind)


def finite_difference_grads(net, batch, targets, weights, h=1e-5):
    """Central-difference gradient of the network loss over the flat params."""
    base = nn.get_params(net)
    grad = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + h
        nn.set_params(net, bumped)
        up = nn.network_loss(net, batch, targets, weights)
        bumped[i] = base[i] - h
        nn.set_params(net, bumped)
        down = nn.network_loss(net, batch, targets, weights)
        grad[i] = (up - down) / (2.0 * h)
    nn.set_params(net, base)
    return grad


def flat_grads(grads):
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])


class TestForward:
    def test_identity_layer_passes_input_through(self):
        layer = nn.DenseLayer(weights=np.eye(2), bias=np.zeros(2), activation="identity")
        net = nn.Network([layer])
        out = nn.forward(net, np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_hand_computed_matrix_multiply(self):
        layer = nn.DenseLayer(
            weights=np.array([[1.0, 1.0], [0.0, 1.0]]), bias=np.zeros(2), activation="identity"
        )
        net = nn.Network([layer])
        out = nn.forward(net, np.array([[2.0, 3.0]]))
        np.testing.assert_array_equal(out, [[5.0, 3.0]])

    def test_fully_masked_layer_outputs_activated_bias(self):
        layer = nn.DenseLayer(
            weights=np.full((3, 2), 7.0),
            bias=np.array([0.5, -1.0, 2.0]),
            activation="relu",
            mask=np.zeros((3, 2)),
        )
        net = nn.Network([layer])
        out = nn.forward(net, np.zeros((4, 2)))
        np.testing.assert_array_equal(out, np.tile([0.5, 0.0, 2.0], (4, 1)))

    def test_dimension_mismatch_raises_shape_error(self):
        net = nn.Network([nn.glorot_layer(3, 2, "identity", np.random.default_rng(0))])
        with pytest.raises(ShapeError):
            nn.forward(net, np.zeros((1, 4)))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        net = random_net(rng, [4, 5, 3], ["relu", "softmax"], "weighted-cross-entropy")
        out = nn.forward(net, rng.uniform(size=(6, 4)))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


class TestLosses:
    def test_perfect_one_hot_predictions_give_zero_loss(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss = nn.weighted_ce_loss(probs, np.array([0, 1]), np.array([3.0, 0.5]))
        assert loss == 0.0

    def test_unit_weights_reduce_to_mean_cross_entropy(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(5, 4))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        labels = rng.integers(0, 4, size=5)
        expected = float(np.mean(-np.log(probs[np.arange(5), labels])))
        got = nn.weighted_ce_loss(probs, labels, np.ones(5))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_hand_weighted_average(self):
        # per-sample losses 0.5 and 9.9, weights 2 and 0 -> (2*0.5 + 0)/2
        p = np.array([[np.exp(-0.5), 1.0 - np.exp(-0.5)], [np.exp(-9.9), 1.0 - np.exp(-9.9)]])
        loss = nn.weighted_ce_loss(p, np.array([0, 0]), np.array([2.0, 0.0]))
        assert loss == pytest.approx(0.5, rel=1e-12)

    def test_loss_is_linear_in_sample_weights(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(8, 3))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        labels = rng.integers(0, 3, size=8)
        w1, w2 = rng.uniform(size=8), rng.uniform(size=8)
        a, b = 0.7, 2.3
        lhs = nn.weighted_ce_loss(probs, labels, a * w1 + b * w2)
        rhs = a * nn.weighted_ce_loss(probs, labels, w1) + b * nn.weighted_ce_loss(probs, labels, w2)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ShapeError):
            nn.weighted_ce_loss(np.array([[0.5, 0.4]]), np.array([0]), np.ones(1))

    def test_zero_probability_is_clamped_not_infinite(self):
        loss = nn.weighted_ce_loss(np.array([[0.0, 1.0]]), np.array([0]), np.ones(1))
        assert np.isfinite(loss)
        assert loss == pytest.approx(-np.log(1e-12))


class TestBackward:
    def test_zero_sample_weights_give_zero_gradients(self):
        rng = np.random.default_rng(0)
        net = random_net(rng, [3, 4, 2], ["relu", "softmax"], "weighted-cross-entropy")
        grads = nn.backward(net, rng.uniform(size=(5, 3)), rng.integers(0, 2, 5), np.zeros(5))
        for dw, db in grads:
            assert not dw.any()
            assert not db.any()

    def test_doubling_weights_doubles_gradients(self):
        rng = np.random.default_rng(1)
        net = random_net(rng, [3, 4, 2], ["sigmoid", "softmax"], "weighted-cross-entropy")
        x = rng.uniform(size=(6, 3))
        y = rng.integers(0, 2, 6)
        w = rng.uniform(0.1, 2.0, size=6)
        g1 = flat_grads(nn.backward(net, x, y, w))
        g2 = flat_grads(nn.backward(net, x, y, 2.0 * w))
        np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-12)

    @pytest.mark.parametrize(
        "loss_kind,acts",
        [
            ("weighted-cross-entropy", ["relu", "sigmoid", "softmax"]),
            ("bernoulli-nll", ["relu", "identity", "sigmoid"]),
            ("binary-cross-entropy", ["sigmoid", "relu", "sigmoid"]),
        ],
    )
    def test_gradients_match_central_finite_differences(self, loss_kind, acts):
        rng = np.random.default_rng(42)
        dims = [5, 7, 6, 4]
        net = random_net(rng, dims, acts, loss_kind, mask_prob=0.3)
        x = rng.uniform(size=(8, 5))
        if loss_kind == "weighted-cross-entropy":
            targets = rng.integers(0, 4, size=8)
        else:
            targets = rng.uniform(size=(8, 4))
        w = rng.uniform(0.2, 1.5, size=8)
        analytic = flat_grads(nn.backward(net, x, targets, w))
        numeric = finite_difference_grads(net, x, targets, w)
        rel = np.linalg.norm(analytic - numeric) / max(
            np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12
        )
        assert rel < 1e-4

    def test_masked_entries_have_exactly_zero_gradient(self):
        rng = np.random.default_rng(5)
        mask = (rng.uniform(size=(4, 3)) > 0.5).astype(float)
        layers = [
            nn.glorot_layer(3, 4, "relu", rng, mask=mask),
            nn.glorot_layer(4, 2, "softmax", rng),
        ]
        net = nn.Network(layers, "weighted-cross-entropy")
        grads = nn.backward(net, rng.uniform(size=(6, 3)), rng.integers(0, 2, 6), np.ones(6))
        assert np.all(grads[0][0][mask == 0.0] == 0.0)

    def test_masked_entry_does_not_affect_output(self):
        # finite perturbation of a masked stored weight leaves every output bit-identical
        rng = np.random.default_rng(6)
        mask = np.ones((4, 3))
        mask[2, 1] = 0.0
        net = nn.Network(
            [nn.glorot_layer(3, 4, "sigmoid", rng, mask=mask)], "binary-cross-entropy"
        )
        x = rng.uniform(size=(5, 3))
        before = nn.forward(net, x)
        net.layers[0].weights[2, 1] += 123.0
        after = nn.forward(net, x)
        np.testing.assert_array_equal(before, after)

    def test_nonfinite_loss_names_offending_sample(self):
        # second sample overflows to inf, and inf + (-inf) in the next layer
        # makes its per-sample loss NaN
        first = nn.DenseLayer(
            weights=np.diag([1e308, 1e308]), bias=np.zeros(2), activation="identity"
        )
        second = nn.DenseLayer(
            weights=np.ones((2, 2)), bias=np.zeros(2), activation="sigmoid"
        )
        net = nn.Network([first, second], "bernoulli-nll")
        x = np.array([[0.0, 0.0], [1e5, -1e5]])
        with pytest.raises(NumericError, match="sample index 1"):
            nn.backward(net, x, np.zeros((2, 2)), np.ones(2))


class TestSgd:
    def test_zero_learning_rate_leaves_parameters_unchanged(self):
        rng = np.random.default_rng(2)
        net = random_net(rng, [3, 4, 2], ["relu", "softmax"], "weighted-cross-entropy")
        before = nn.get_params(net)
        grads = nn.backward(net, rng.uniform(size=(4, 3)), rng.integers(0, 2, 4), np.ones(4))
        nn.sgd_step(net, grads, 0.0)
        np.testing.assert_array_equal(nn.get_params(net), before)

    def test_single_scalar_update(self):
        layer = nn.DenseLayer(weights=np.array([[1.0]]), bias=np.zeros(1), activation="identity")
        net = nn.Network([layer], "bernoulli-nll")
        nn.sgd_step(net, [(np.array([[0.5]]), np.zeros(1))], lr=0.01)
        assert layer.weights[0, 0] == pytest.approx(0.995, abs=0)

    def test_masked_entry_stays_inert_after_updates(self):
        rng = np.random.default_rng(8)
        mask = np.ones((2, 2))
        mask[0, 1] = 0.0
        net = nn.Network(
            [nn.glorot_layer(2, 2, "sigmoid", rng, mask=mask)], "bernoulli-nll"
        )
        net.layers[0].weights[0, 1] = 5.0  # stored but masked
        x = rng.uniform(size=(4, 2))
        t = rng.uniform(size=(4, 2))
        for _ in range(3):
            nn.sgd_step(net, nn.backward(net, x, t, np.ones(4)), 0.1)
        assert net.layers[0].weights[0, 1] == 5.0  # untouched by training
        out1 = nn.forward(net, x)
        net.layers[0].weights[0, 1] = -5.0
        np.testing.assert_array_equal(nn.forward(net, x), out1)

    def test_training_is_bit_deterministic(self):
        def run():
            rng = np.random.default_rng(123)
            net = random_net(rng, [4, 6, 3], ["relu", "softmax"], "weighted-cross-entropy")
            x = rng.uniform(size=(20, 4))
            y = rng.integers(0, 3, 20)
            shuffle = np.random.default_rng(77)
            for _ in range(5):
                nn.sgd_epoch(net, x, y, np.ones(20), 0.05, 8, shuffle)
            return nn.get_params(net)

        np.testing.assert_array_equal(run(), run())


class TestSnapshots:
    def test_round_trip_is_exact(self):
        rng = np.random.default_rng(9)
        net = random_net(rng, [3, 5, 2], ["relu", "softmax"], "weighted-cross-entropy")
        vec = nn.get_params(net)
        blob = nn.serialize_params(net)
        dims, restored = nn.deserialize_params(blob)
        assert dims == [(5, 3), (2, 5)]
        np.testing.assert_array_equal(restored, vec)

    def test_wire_size_is_payload_bytes_over_eight(self):
        rng = np.random.default_rng(10)
        net = random_net(rng, [3, 5, 2], ["relu", "softmax"], "weighted-cross-entropy")
        blob = nn.serialize_params(net)
        header = 4 + 8 * len(net.layers)
        assert (len(blob) - header) // 8 == nn.param_count(net)
        assert nn.param_count(net) == (3 * 5 + 5) + (5 * 2 + 2)

    def test_set_params_rejects_wrong_length(self):
        rng = np.random.default_rng(12)
        net = random_net(rng, [3, 2], ["softmax"], "weighted-cross-entropy")
        with pytest.raises(ShapeError):
            nn.set_params(net, np.zeros(3))

    def test_mismatched_loss_activation_pairing_rejected(self):
        rng = np.random.default_rng(13)
        net = random_net(rng, [3, 2], ["sigmoid"], "weighted-cross-entropy")
        with pytest.raises(ConfigError):
            nn.backward(net, rng.uniform(size=(2, 3)), np.array([0, 1]), np.ones(2))
