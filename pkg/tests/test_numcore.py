import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from slufuse import numcore as nc
from slufuse.numcore import ShapeError


def triple_loop_matmul(a, b):
    m, p = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(p):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        b = nc.Tensor([[1, 2], [3, 4]])
        np.testing.assert_array_equal(nc.matmul(nc.Tensor(np.eye(2)), b).data, [[1, 2], [3, 4]])

    def test_hand_arithmetic(self):
        assert nc.matmul(nc.Tensor([[1, 2]]), nc.Tensor([[3], [4]])).data.tolist() == [[11]]

    def test_against_triple_loop(self, f64, rng):
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        got = nc.matmul(nc.Tensor(a), nc.Tensor(b)).data
        assert np.max(np.abs(got - triple_loop_matmul(a, b))) < 1e-12

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            nc.matmul(nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones((2, 3))))

    def test_associativity(self, f64, rng):
        a, b, c = (nc.Tensor(rng.normal(size=(4, 4))) for _ in range(3))
        left = nc.matmul(nc.matmul(a, b), c).data
        right = nc.matmul(a, nc.matmul(b, c)).data
        assert np.max(np.abs(left - right)) < 1e-9


class TestElementwise:
    def test_hadamard(self):
        out = nc.elementwise("hadamard", nc.Tensor([1, 2, 3]), nc.Tensor([4, 5, 6]))
        assert out.data.tolist() == [4, 10, 18]

    def test_sigmoid_zero(self):
        assert nc.elementwise("sigmoid", nc.Tensor([0.0])).data.tolist() == [0.5]

    def test_tanh_zero(self):
        assert nc.elementwise("tanh", nc.Tensor([0.0, 0.0])).data.tolist() == [0, 0]

    def test_relu_and_scale(self):
        assert nc.elementwise("relu", nc.Tensor([-1.0, 2.0])).data.tolist() == [0, 2]
        assert nc.elementwise("scale", nc.Tensor([1.0, 2.0]), 3.0).data.tolist() == [3, 6]

    def test_no_implicit_broadcasting(self):
        with pytest.raises(ShapeError):
            nc.elementwise("add", nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones(3)))

    def test_sigmoid_extreme_inputs_finite(self):
        y = nc.sigmoid(nc.Tensor([-1000.0, 1000.0])).data
        assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(nc.softmax(nc.Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_large_logits_do_not_overflow(self):
        y = nc.softmax(nc.Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(y))
        assert y[0] == pytest.approx(1.0) and y[1] == pytest.approx(0.0)

    def test_direct_formula(self, f64, rng):
        v = rng.normal(size=10)
        direct = np.exp(v) / np.exp(v).sum()
        assert np.max(np.abs(nc.softmax(nc.Tensor(v)).data - direct)) < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                      elements=st.floats(-500, 500)),
           st.integers(0, 2))
    def test_rows_sum_to_one(self, x, axis):
        axis = axis % x.ndim
        with nc.precision(64):
            y = nc.softmax(nc.Tensor(x), axis=axis).data
        np.testing.assert_allclose(y.sum(axis=axis), 1.0, atol=1e-6)
        assert np.all((y >= 0) & (y <= 1))


class TestLogsumexp:
    def test_two_zeros(self):
        assert nc.logsumexp(nc.Tensor([0.0, 0.0])).item() == pytest.approx(math.log(2), abs=1e-6)

    def test_single(self):
        assert nc.logsumexp(nc.Tensor([5.0])).item() == pytest.approx(5.0)

    def test_no_overflow(self, f64):
        assert nc.logsumexp(nc.Tensor([1000.0, 1000.0])).item() == pytest.approx(1000 + math.log(2))

    def test_empty(self):
        with pytest.raises(ValueError):
            nc.logsumexp(nc.Tensor(np.zeros(0)))


class TestBackward:
    def test_square_sum(self, f64):
        w = nc.parameter([1.0, 2.0])
        grads = nc.backward(nc.sum(nc.hadamard(w, w)), {"w": w})
        np.testing.assert_array_equal(grads["w"], [2.0, 4.0])

    def test_constant_loss_gives_zero_gradients(self, f64):
        w = nc.parameter([1.0, 2.0])
        grads = nc.backward(nc.sum(nc.Tensor([3.0])), {"w": w})
        np.testing.assert_array_equal(grads["w"], [0.0, 0.0])

    def test_unreachable_parameter_is_zero(self, f64):
        a, b = nc.parameter([1.0, 2.0]), nc.parameter([[5.0]])
        grads = nc.backward(nc.sum(a), {"a": a, "b": b})
        assert grads["b"].shape == (1, 1) and grads["b"][0, 0] == 0.0

    def test_non_scalar_loss(self):
        with pytest.raises(ShapeError):
            nc.backward(nc.parameter([1.0, 2.0]))

    def test_node_used_twice_sums_paths(self, f64, rng):
        x = nc.parameter(rng.normal(size=(3, 3)))
        w = nc.constant(rng.normal(size=(3, 3)))
        shared = nc.tanh(nc.matmul(x, w))
        twice = nc.backward(nc.sum(nc.add(shared, shared)), {"x": x})["x"].copy()
        single = nc.backward(nc.sum(nc.tanh(nc.matmul(x, w))), {"x": x})["x"]
        np.testing.assert_allclose(twice, 2 * single, rtol=1e-14)

    def test_matmul_chain_vs_central_differences(self, f64, rng):
        a = nc.parameter(rng.normal(size=(3, 3)))
        b = nc.parameter(rng.normal(size=(3, 3)))
        c = nc.constant(rng.normal(size=(3, 3)))
        rep = nc.grad_check(lambda: nc.sum(nc.matmul(nc.matmul(a, b), c)), {"a": a, "b": b},
                            h=1e-5, tol=1e-6)
        assert rep.passed, rep.max_rel_error

    def test_deep_graph_no_recursion_limit(self, f64):
        x = nc.parameter([0.5])
        y = x
        for _ in range(5000):
            y = nc.scale(y, 1.0)
        assert nc.backward(nc.sum(y), {"x": x})["x"][0] == 1.0

    def test_index_scatter_accumulates_repeats(self, f64):
        t = nc.parameter([1.0, 2.0, 3.0])
        g = nc.backward(nc.sum(nc.index(t, np.array([0, 0, 2]))), {"t": t})["t"]
        np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])

    def test_no_grad_skips_tape(self):
        w = nc.parameter([1.0])
        with nc.no_grad():
            y = nc.scale(w, 2.0)
        assert not y.requires_grad


class TestGradCheck:
    def test_quadratic(self, f64, rng):
        w = nc.parameter(rng.normal(size=5))
        assert nc.grad_check(lambda: nc.sum(nc.hadamard(w, w)), {"w": w}, 1e-5, 1e-6).passed

    def test_sigmoid_dense_softmax_ce(self, f64, rng):
        x = nc.constant(rng.normal(size=(4, 3)))
        w1, w2 = nc.parameter(rng.normal(size=(3, 5))), nc.parameter(rng.normal(size=(5, 4)))
        gold = np.array([0, 3, 1, 2])

        def fn():
            logits = nc.matmul(nc.sigmoid(nc.matmul(x, w1)), w2)
            probs = nc.softmax(logits, axis=-1)
            return nc.scale(nc.sum(nc.log(nc.index(probs, (np.arange(4), gold)))), -0.25)

        assert nc.grad_check(fn, {"w1": w1, "w2": w2}, 1e-5, 1e-4).passed

    def test_detects_corrupted_gradient(self, f64, rng, monkeypatch):
        w = nc.parameter(rng.normal(size=4))
        real_backward = nc.backward

        def doubled(loss, params=None):
            out = real_backward(loss, params)
            return {k: 2 * v for k, v in out.items()}

        monkeypatch.setattr(nc, "backward", doubled)
        rep = nc.grad_check(lambda: nc.sum(nc.hadamard(w, w)), {"w": w}, 1e-5, 1e-6)
        assert not rep.passed
        assert rep.max_rel_error["w"] == pytest.approx(1 / 3, rel=1e-6)

    def test_requires_64_bit(self):
        with nc.precision(32):
            w = nc.parameter([1.0])
        with pytest.raises(ValueError):
            nc.grad_check(lambda: nc.sum(w), {"w": w})

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_perturbation(self, f64):
        w = nc.parameter([0.0])
        with pytest.raises(FloatingPointError):
            nc.grad_check(lambda: nc.sum(nc.log(w)), {"w": w})


PRIMITIVES = {
    "add": lambda a, b: nc.add(a, b),
    "sub": lambda a, b: nc.sub(a, b),
    "hadamard": lambda a, b: nc.hadamard(a, b),
    "tanh": lambda a, b: nc.tanh(a),
    "sigmoid": lambda a, b: nc.sigmoid(a),
    "relu": lambda a, b: nc.relu(a),
    "exp": lambda a, b: nc.exp(a),
    "scale": lambda a, b: nc.scale(a, -1.7),
    "softmax": lambda a, b: nc.softmax(a, axis=-1),
    "log_softmax": lambda a, b: nc.log_softmax(a, axis=0),
    "logsumexp": lambda a, b: nc.logsumexp(a, axis=-1),
    "max": lambda a, b: nc.max(a, axis=0),
    "transpose": lambda a, b: nc.transpose(a),
    "concat": lambda a, b: nc.concat([a, b], axis=0),
    "stack": lambda a, b: nc.stack([a, b], axis=1),
    "expand": lambda a, b: nc.expand(a, 1, 3),
    "matmul": lambda a, b: nc.matmul(a, nc.transpose(b)),
    "where": lambda a, b: nc.where(a.data > 0, a, b),
    "mean": lambda a, b: nc.mean(a, axis=1),
}


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 5, size=2))
    with nc.precision(64):
        a = nc.parameter(rng.normal(size=shape))
        b = nc.parameter(rng.normal(size=shape))
        out_shape = PRIMITIVES[name](a, b).shape
        w = nc.constant(rng.normal(size=out_shape))
        rep = nc.grad_check(lambda: nc.sum(nc.hadamard(PRIMITIVES[name](a, b), w)),
                            {"a": a, "b": b}, h=1e-5, tol=1e-4)
    assert rep.passed, rep.max_rel_error
