"""Engine tests: forward values against numpy, gradients against central
finite differences in float64."""

import numpy as np
import pytest

from helpers import check_gradients
from nacodec import tensor as T
from nacodec.tensor import Tensor


class TestForward:
    def test_arithmetic_matches_numpy(self):
        rng = np.random.default_rng(42)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((3, 4)) + 2.5
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_allclose((ta + tb).data, a + b)
        np.testing.assert_allclose((ta - tb).data, a - b)
        np.testing.assert_allclose((ta * tb).data, a * b)
        np.testing.assert_allclose((ta / tb).data, a / b)
        np.testing.assert_allclose((ta**2).data, a**2)
        np.testing.assert_allclose((-ta).data, -a)
        np.testing.assert_allclose((2.0 * ta + 1.0).data, 2 * a + 1)

    def test_scalar_operand_keeps_dtype(self):
        x = Tensor(np.ones((2, 2), dtype=np.float32))
        assert (x * 2.0).dtype == np.float32
        assert (x + 1).dtype == np.float32
        assert (1.0 - x).dtype == np.float32
        assert (x / 3.0).dtype == np.float32

    def test_matmul_batched(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((2, 3, 4, 5))
        b = rng.standard_normal((2, 3, 5, 6))
        np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, a @ b)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 7)) * 30
        s = T.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(s.sum(-1), np.ones(4), atol=1e-12)
        np.testing.assert_allclose(
            T.log_softmax(Tensor(x), axis=-1).data, np.log(s), atol=1e-9
        )

    def test_elu_values(self):
        x = Tensor(np.array([-2.0, -0.5, 0.0, 1.5]))
        expected = np.where(x.data < 0, np.expm1(x.data), x.data)
        np.testing.assert_allclose(T.elu(x).data, expected)

    def test_clip_with_array_bounds(self):
        x = Tensor(np.array([-3.0, 0.0, 3.0]))
        lo = np.array([-1.0, -1.0, -1.0])
        np.testing.assert_allclose(T.clip(x, lo, 1.0).data, [-1.0, 0.0, 1.0])


class TestBackwardMechanics:
    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2).backward()

    def test_backward_with_explicit_cotangent(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2
        y.backward(np.array([1.0, 10.0, 100.0]))
        np.testing.assert_allclose(x.grad, [2.0, 20.0, 200.0])

    def test_grad_accumulates_across_calls(self):
        x = Tensor(np.ones(2), requires_grad=True)
        (x.sum()).backward()
        (x.sum()).backward()
        np.testing.assert_allclose(x.grad, [2.0, 2.0])

    def test_diamond_graph_accumulates_once_per_path(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * x + x * 2.0  # dy/dx = 2x + 2 = 8
        y.backward(np.ones(1))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_detach_blocks_gradient(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x.detach() * x
        y.backward(np.ones(1))
        np.testing.assert_allclose(x.grad, [2.0])  # only the tracked factor

    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = x * 3 + 1
        assert y._parents == () and y._bw is None

    def test_straight_through_forwards_hard_backwards_soft(self):
        x = Tensor(np.array([0.3, 0.7]), requires_grad=True)
        hard = np.array([0.0, 1.0])
        y = T.straight_through(x, hard)
        np.testing.assert_allclose(y.data, hard)
        (y * np.array([2.0, 5.0])).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 5.0])

    def test_broadcast_add_sums_gradient(self):
        a = Tensor(np.zeros((3, 4)), requires_grad=True)
        b = Tensor(np.zeros((1, 4)), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_allclose(b.grad, np.full((1, 4), 3.0))


class TestGradientsFiniteDifference:
    def test_elementwise_chain(self):
        rng = np.random.default_rng(7)
        arrays = {"x": rng.standard_normal((3, 4)) * 0.7 + 1.6}
        check_gradients(
            lambda t: (T.exp(t["x"]) * T.log(t["x"]) / T.sqrt(t["x"])).sum(),
            arrays,
        )

    def test_activations(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((4, 5)) * 2
        x += 0.05 * np.sign(x) + 0.01  # keep away from kinks
        for fn in (T.tanh, T.sigmoid, T.relu, T.elu,
                   lambda v: T.leaky_relu(v, 0.2), T.absval):
            check_gradients(lambda t, fn=fn: fn(t["x"]).sum(), {"x": x})

    def test_clip_gradient(self):
        x = np.linspace(-2, 2, 9) + 0.013
        check_gradients(lambda t: (T.clip(t["x"], -1.0, 1.0) ** 2).sum(), {"x": x})

    def test_div_and_pow(self):
        rng = np.random.default_rng(9)
        arrays = {
            "a": rng.standard_normal((3, 3)),
            "b": rng.standard_normal((3, 3)) + 3.0,
        }
        check_gradients(lambda t: (t["a"] / t["b"] + t["b"] ** 3).sum(), arrays)

    def test_matmul_2d_and_batched(self):
        rng = np.random.default_rng(10)
        arrays = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2))}
        check_gradients(lambda t: ((t["a"] @ t["b"]) ** 2).sum(), arrays)
        arrays = {
            "a": rng.standard_normal((2, 2, 3, 4)),
            "b": rng.standard_normal((2, 2, 4, 2)),
        }
        check_gradients(lambda t: ((t["a"] @ t["b"]) ** 2).sum(), arrays)

    def test_matmul_broadcast_operand(self):
        rng = np.random.default_rng(11)
        arrays = {
            "a": rng.standard_normal((5, 4)),  # broadcast over batch
            "b": rng.standard_normal((3, 4, 2)),
        }
        check_gradients(lambda t: ((t["a"] @ t["b"]) ** 2).sum(), arrays)

    def test_reductions(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((3, 4, 5))
        check_gradients(lambda t: (t["x"].sum(axis=1) ** 2).sum(), {"x": x})
        check_gradients(lambda t: (t["x"].mean(axis=(0, 2)) ** 2).sum(), {"x": x})
        check_gradients(
            lambda t: t["x"].mean(axis=1, keepdims=True).sum() * 2.0, {"x": x}
        )

    def test_shape_ops(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 3, 4))
        check_gradients(lambda t: (t["x"].reshape(6, 4) ** 2).sum(), {"x": x})
        check_gradients(lambda t: (t["x"].transpose(2, 0, 1) ** 3).sum(), {"x": x})
        check_gradients(lambda t: (t["x"][:, 1:3, ::2] ** 2).sum(), {"x": x})
        check_gradients(
            lambda t: (T.pad(t["x"], ((0, 0), (1, 2), (3, 0))) ** 2).sum(), {"x": x}
        )

    def test_concat_and_stack(self):
        rng = np.random.default_rng(14)
        arrays = {
            "a": rng.standard_normal((2, 3)),
            "b": rng.standard_normal((2, 5)),
        }
        check_gradients(
            lambda t: (T.concat([t["a"], t["b"]], axis=1) ** 2).sum(), arrays
        )
        arrays = {
            "a": rng.standard_normal((2, 3)),
            "b": rng.standard_normal((2, 3)),
        }
        check_gradients(
            lambda t: (T.stack([t["a"], t["b"]], axis=2) ** 2).sum(), arrays
        )

    def test_softmax_family(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((3, 6)) * 2
        w = rng.standard_normal(6)
        check_gradients(
            lambda t: (T.softmax(t["x"], axis=-1) * w).sum(), {"x": x}
        )
        check_gradients(
            lambda t: (T.log_softmax(t["x"], axis=-1) * w).sum(), {"x": x}
        )

    def test_cross_entropy(self):
        rng = np.random.default_rng(16)
        logits = rng.standard_normal((4, 3, 5)) * 2
        targets = rng.integers(0, 5, size=(4, 3))
        check_gradients(
            lambda t: T.cross_entropy_logits(t["x"], targets), {"x": logits}
        )
        # value oracle: -mean log softmax at the target
        p = np.exp(logits - logits.max(-1, keepdims=True))
        p /= p.sum(-1, keepdims=True)
        expected = -np.mean(
            np.log(np.take_along_axis(p, targets[..., None], -1))
        )
        got = T.cross_entropy_logits(Tensor(logits), targets).item()
        np.testing.assert_allclose(got, expected, rtol=1e-10)

    def test_embedding_gather_scatter(self):
        rng = np.random.default_rng(17)
        table = rng.standard_normal((7, 3))
        idx = np.array([[0, 2, 2], [6, 0, 1]])
        check_gradients(
            lambda t: (T.embedding(t["w"], idx) ** 2).sum(), {"w": table}
        )
        # repeated rows accumulate
        w = Tensor(table, requires_grad=True)
        T.embedding(w, np.array([2, 2, 2])).sum().backward()
        np.testing.assert_allclose(w.grad[2], np.full(3, 3.0))
        np.testing.assert_allclose(w.grad[0], np.zeros(3))
