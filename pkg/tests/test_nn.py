import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egnet.checks import grad_violation, numeric_gradient
from egnet.errors import DimensionError, ValidationError
from egnet.nn import (
    Layer,
    Mlp,
    aggregate,
    aggregate_backward,
    mlp_backward,
    mlp_forward,
    mlp_init,
    zero_mlp,
)


class TestInit:
    def test_shapes(self):
        m = mlp_init([3, 1], seed=0)
        assert m.layers[0].weight.shape == (1, 3)
        np.testing.assert_array_equal(m.layers[0].bias, [0.0])

    def test_deterministic(self):
        a, b = mlp_init([4, 8, 2], seed=3), mlp_init([4, 8, 2], seed=3)
        for (p, _), (q, _) in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_glorot_bound(self):
        for seed in range(50):
            m = mlp_init([4, 8, 2], seed=seed)
            for layer in m.layers:
                s = np.sqrt(6.0 / (layer.n_in + layer.n_out))
                assert np.all(np.abs(layer.weight) <= s)

    def test_last_layer_linear(self):
        m = mlp_init([2, 5, 5, 1], "relu", 0)
        assert [l.activation for l in m.layers] == ["relu", "relu", "identity"]

    @pytest.mark.parametrize("sizes", [[], [3], [3, 0], [2, -1, 1]])
    def test_bad_sizes(self, sizes):
        with pytest.raises(ValidationError):
            mlp_init(sizes)

    def test_bad_activation(self):
        with pytest.raises(ValidationError):
            mlp_init([2, 2], "gelu")

    def test_layers_must_chain(self):
        with pytest.raises(DimensionError):
            Mlp([Layer(np.ones((3, 2)), np.zeros(3), "tanh"), Layer(np.ones((1, 4)), np.zeros(1), "identity")])

    def test_grad_shapes_mirror_params(self):
        for p, g in mlp_init([3, 7, 2], seed=1).parameters():
            assert p.shape == g.shape


def straight_line(m, x):
    w1, b1 = m.layers[0].weight, m.layers[0].bias
    w2, b2 = m.layers[1].weight, m.layers[1].bias
    h = np.tanh(w1 @ x + b1)
    return w2 @ h + b2


class TestForward:
    def test_zero_params(self, rng):
        y, _ = mlp_forward(zero_mlp([4, 6, 3]), rng.standard_normal(4))
        np.testing.assert_array_equal(y, np.zeros(3))

    def test_identity_layer(self, rng):
        m = Mlp([Layer(np.eye(3), np.zeros(3), "identity")])
        x = rng.standard_normal(3)
        np.testing.assert_array_equal(mlp_forward(m, x)[0], x)

    def test_matches_straight_line(self, rng):
        for seed in range(5):
            m = mlp_init([5, 7, 3], seed=seed)
            x = rng.standard_normal(5)
            np.testing.assert_allclose(mlp_forward(m, x)[0], straight_line(m, x), rtol=1e-13, atol=1e-14)

    def test_batch_rows_match_single(self, rng):
        m = mlp_init([4, 9, 2], seed=2)
        xs = rng.standard_normal((6, 4))
        batch, _ = mlp_forward(m, xs)
        for x, y in zip(xs, batch):
            assert np.array_equal(mlp_forward(m, x)[0], y)

    def test_row_result_independent_of_position(self, rng):
        m = mlp_init([4, 9, 2], seed=2)
        xs = rng.standard_normal((6, 4))
        perm = rng.permutation(6)
        assert np.array_equal(mlp_forward(m, xs)[0][perm], mlp_forward(m, xs[perm])[0])

    def test_deterministic(self, rng):
        m = mlp_init([3, 16, 16, 2], seed=4)
        x = rng.standard_normal(3)
        assert np.array_equal(mlp_forward(m, x)[0], mlp_forward(m, x)[0])

    def test_relu(self):
        m = Mlp([Layer([[1.0], [-1.0]], [0.0, 0.0], "relu")])
        np.testing.assert_array_equal(mlp_forward(m, [2.0])[0], [2.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            mlp_forward(mlp_init([3, 2]), np.ones(4))


class TestBackward:
    def test_zero_upstream(self, rng):
        m = mlp_init([3, 5, 2], seed=0)
        _, tr = mlp_forward(m, rng.standard_normal(3))
        np.testing.assert_array_equal(mlp_backward(m, tr, np.zeros(2)), np.zeros(3))
        for _, g in m.parameters():
            assert not g.any()

    def test_identity_layer(self, rng):
        m = Mlp([Layer(np.eye(3), np.zeros(3), "identity")])
        _, tr = mlp_forward(m, rng.standard_normal(3))
        up = rng.standard_normal(3)
        np.testing.assert_array_equal(mlp_backward(m, tr, up), up)

    def test_accumulates(self, rng):
        m = mlp_init([2, 3, 1], seed=0)
        _, tr = mlp_forward(m, rng.standard_normal(2))
        mlp_backward(m, tr, [1.0])
        once = m.layers[0].grad_weight.copy()
        mlp_backward(m, tr, [1.0])
        np.testing.assert_allclose(m.layers[0].grad_weight, 2 * once)

    def test_shape_mismatch(self, rng):
        m = mlp_init([2, 3, 1], seed=0)
        _, tr = mlp_forward(m, rng.standard_normal(2))
        with pytest.raises(DimensionError):
            mlp_backward(m, tr, np.ones(2))

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    @pytest.mark.parametrize("sizes", [[3, 1], [4, 16, 2], [5, 16, 16, 3], [2, 8, 8, 8, 2]])
    def test_finite_differences(self, rng, sizes, activation):
        m = mlp_init(sizes, activation, seed=int(rng.integers(1 << 30)))
        x = rng.standard_normal(sizes[0])
        up = rng.standard_normal(sizes[-1])
        _, tr = mlp_forward(m, x)
        gx = mlp_backward(m, tr, up)
        worst = 0.0
        for p, g in m.parameters():
            num = numeric_gradient(lambda: [mlp_forward(m, x)[0]], [up], p)
            worst = max(worst, grad_violation(g, num))
        xx = x.copy()
        worst = max(worst, grad_violation(gx, numeric_gradient(lambda: [mlp_forward(m, xx)[0]], [up], xx)))
        assert worst <= 1e-4

    def test_batched_gradients_sum_rows(self, rng):
        m = mlp_init([3, 4, 2], seed=5)
        xs, ups = rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
        _, tr = mlp_forward(m, xs)
        gx = mlp_backward(m, tr, ups)
        batch_grads = [g.copy() for _, g in m.parameters()]
        m.zero_grad()
        for x, u, row in zip(xs, ups, gx):
            _, t1 = mlp_forward(m, x)
            np.testing.assert_allclose(mlp_backward(m, t1, u), row, rtol=1e-13)
        for (_, g), bg in zip(m.parameters(), batch_grads):
            np.testing.assert_allclose(g, bg, rtol=1e-12, atol=1e-15)


class TestCheckpoint:
    def test_round_trip(self):
        m = mlp_init([3, 5, 2], "relu", seed=9)
        d = json.loads(json.dumps(m.to_dict()))
        assert d["version"] == "egn-ckpt-1"
        back = Mlp.from_dict(d)
        for (p, _), (q, _) in zip(m.parameters(), back.parameters()):
            np.testing.assert_array_equal(p, q)
        assert [l.activation for l in back.layers] == ["relu", "identity"]

    def test_wrong_version(self):
        d = mlp_init([2, 2]).to_dict()
        d["version"] = "nope"
        with pytest.raises(ValidationError):
            Mlp.from_dict(d)


class TestAggregate:
    def test_empty_sum(self):
        np.testing.assert_array_equal(aggregate("sum", np.zeros((0, 3))), np.zeros(3))

    @pytest.mark.parametrize("kind", ["sum", "mean", "max"])
    def test_empty_is_zero(self, kind):
        np.testing.assert_array_equal(aggregate(kind, [], dim=2), np.zeros(2))

    def test_empty_needs_width(self):
        with pytest.raises(DimensionError):
            aggregate("sum", [])

    def test_mean(self):
        np.testing.assert_array_equal(aggregate("mean", [[1.0, 3.0], [3.0, 5.0]]), [2.0, 4.0])

    def test_max(self):
        np.testing.assert_array_equal(aggregate("max", [[1.0, 7.0], [3.0, -5.0]]), [3.0, 7.0])

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            aggregate("median", [[1.0]])

    @pytest.mark.parametrize("kind", ["sum", "mean", "max"])
    def test_all_orders_bitwise(self, rng, kind):
        rows = rng.standard_normal((4, 3)) * 10.0 ** rng.integers(-8, 8, size=(4, 3))
        ref = aggregate(kind, rows)
        for order in itertools.permutations(range(4)):
            assert np.array_equal(aggregate(kind, rows[list(order)]), ref)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 12), kind=st.sampled_from(["sum", "mean", "max"]))
    def test_shuffle_invariant(self, seed, k, kind):
        rng = np.random.default_rng(seed)
        rows = rng.standard_normal((k, 3)) * rng.uniform(0, 1e6)
        assert np.array_equal(aggregate(kind, rows[rng.permutation(k)]), aggregate(kind, rows))


class TestAggregateBackward:
    def test_sum(self, rng):
        up = rng.standard_normal(2)
        np.testing.assert_array_equal(aggregate_backward("sum", rng.standard_normal((3, 2)), up), np.tile(up, (3, 1)))

    def test_mean(self, rng):
        up = rng.standard_normal(2)
        np.testing.assert_array_equal(aggregate_backward("mean", rng.standard_normal((4, 2)), up), np.tile(up / 4, (4, 1)))

    def test_max_ties_go_to_first(self):
        g = aggregate_backward("max", [[1.0, 2.0], [1.0, 2.0]], [1.0, 1.0])
        np.testing.assert_array_equal(g, [[1.0, 1.0], [0.0, 0.0]])

    def test_empty(self):
        assert aggregate_backward("max", np.zeros((0, 2)), [1.0, 1.0]).shape == (0, 2)

    @pytest.mark.parametrize("kind", ["sum", "mean", "max"])
    def test_finite_differences(self, rng, kind):
        for _ in range(10):
            rows = rng.standard_normal((5, 3))
            up = rng.standard_normal(3)
            num = numeric_gradient(lambda: [aggregate(kind, rows)], [up], rows)
            assert grad_violation(aggregate_backward(kind, rows, up), num) <= 1e-4
