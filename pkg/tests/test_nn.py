import numpy as np
import pytest

from protfit import nn
from protfit.nn import Tensor


def rand_tensor(rng, *shape, grad=True):
    return Tensor(rng.normal(0, 1, size=shape), requires_grad=grad)


def scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce an op output to a scalar with fixed random weights so
    finite differences see every entry."""
    return nn.sum_all(nn.mul(out, Tensor(weights)))


class TestLinear:
    def test_identity_weight(self):
        x = Tensor(np.arange(6, dtype=float).reshape(1, 2, 3))
        w = Tensor(np.eye(3))
        b = Tensor(np.zeros(3))
        out = nn.linear(x, w, b)
        np.testing.assert_array_equal(out.data, x.data)

    def test_bias_addition(self):
        x = Tensor([[[1.0, 2.0]]])
        w = Tensor(np.eye(2))
        b = Tensor([3.0, 3.0])
        out = nn.linear(x, w, b)
        np.testing.assert_array_equal(out.data, [[[4.0, 5.0]]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="width"):
            nn.linear(Tensor(np.ones((1, 2, 3))), Tensor(np.ones((4, 2))), None)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        x = rand_tensor(rng, 2, 3, 4)
        w = rand_tensor(rng, 4, 5)
        b = rand_tensor(rng, 5)
        wts = rng.normal(0, 1, size=(2, 3, 5))
        err = nn.grad_check(lambda *a: scalarize(nn.linear(x, w, b), wts), [x, w, b])
        assert err < 1e-6


class TestSquaredRelu:
    def test_values(self):
        out = nn.squared_relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 4.0])

    def test_analytic_derivative(self):
        x = Tensor([2.0, -1.0], requires_grad=True)
        out = nn.sum_all(nn.squared_relu(x))
        nn.backward(out)
        np.testing.assert_array_equal(x.grad, [4.0, 0.0])

    def test_gradient(self):
        rng = np.random.default_rng(1)
        x = rand_tensor(rng, 3, 4)
        wts = rng.normal(0, 1, size=(3, 4))
        err = nn.grad_check(lambda *a: scalarize(nn.squared_relu(x), wts), [x])
        assert err < 1e-6


class TestCausalConv:
    def test_k1_identity(self):
        x = Tensor(np.arange(6, dtype=float).reshape(1, 3, 2))
        kern = Tensor(np.ones((1, 2)))
        out = nn.causal_depthwise_conv1d(x, kern)
        np.testing.assert_array_equal(out.data, x.data)

    def test_hand_convolution(self):
        # left padding [0, 0, 1, 2, 3] with ones kernel gives running sums
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
        kern = Tensor(np.ones((3, 1)))
        out = nn.causal_depthwise_conv1d(x, kern)
        np.testing.assert_array_equal(out.data.ravel(), [1.0, 3.0, 6.0])

    def test_causality_bit_exact(self):
        rng = np.random.default_rng(2)
        x1 = rng.normal(0, 1, size=(1, 5, 3))
        x2 = x1.copy()
        x2[0, 2, :] += 1.0
        kern = Tensor(rng.normal(0, 1, size=(5, 3)))
        out1 = nn.causal_depthwise_conv1d(Tensor(x1), kern).data
        out2 = nn.causal_depthwise_conv1d(Tensor(x2), kern).data
        assert (out1[0, :2] == out2[0, :2]).all()
        assert (out1[0, 2:] != out2[0, 2:]).any()

    def test_unit_impulse_is_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(0, 1, size=(2, 6, 4))
        kern = np.zeros((5, 4))
        kern[-1, :] = 1.0
        out = nn.causal_depthwise_conv1d(Tensor(x), Tensor(kern))
        np.testing.assert_array_equal(out.data, x)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channel"):
            nn.causal_depthwise_conv1d(Tensor(np.ones((1, 3, 2))), Tensor(np.ones((3, 4))))

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x = rand_tensor(rng, 2, 6, 3)
        kern = rand_tensor(rng, 5, 3)
        wts = rng.normal(0, 1, size=(2, 6, 3))
        err = nn.grad_check(
            lambda *a: scalarize(nn.causal_depthwise_conv1d(x, kern), wts), [x, kern]
        )
        assert err < 1e-6


class TestSoftmax:
    def test_symmetry(self):
        out = nn.softmax_lastaxis(Tensor([[0.0, 0.0]]))
        np.testing.assert_array_equal(out.data, [[0.5, 0.5]])

    def test_full_mask(self):
        out = nn.softmax_lastaxis(Tensor([[0.0, 0.0]]), bias=np.array([0.0, -np.inf]))
        np.testing.assert_array_equal(out.data, [[1.0, 0.0]])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(0, 3, size=(4, 7, 9)))
        out = nn.softmax_lastaxis(x)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12, rtol=0)
        assert (out.data >= 0).all()

    def test_all_masked_row_errors(self):
        with pytest.raises(ValueError, match="fully masked"):
            nn.softmax_lastaxis(Tensor([[1.0, 2.0]]), bias=np.array([-np.inf, -np.inf]))

    def test_gradient(self):
        rng = np.random.default_rng(6)
        x = rand_tensor(rng, 3, 5)
        bias = np.zeros(5)
        bias[-1] = -np.inf
        wts = rng.normal(0, 1, size=(3, 5))
        err = nn.grad_check(lambda *a: scalarize(nn.softmax_lastaxis(x, bias), wts), [x])
        assert err < 1e-6


class TestLayerNorm:
    def test_normalization(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(3, 5, size=(2, 4, 8)))
        g = Tensor(np.ones(8))
        b = Tensor(np.zeros(8))
        out = nn.layer_norm(x, g, b).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_gradient(self):
        rng = np.random.default_rng(8)
        x = rand_tensor(rng, 2, 3, 6)
        g = rand_tensor(rng, 6)
        b = rand_tensor(rng, 6)
        wts = rng.normal(0, 1, size=(2, 3, 6))
        err = nn.grad_check(lambda *a: scalarize(nn.layer_norm(x, g, b), wts), [x, g, b])
        assert err < 1e-6


class TestCrossEntropy:
    def test_uniform_logits(self):
        v = 23
        logits = Tensor(np.zeros((2, 4, v)))
        targets = np.zeros((2, 4), dtype=int)
        loss = nn.cross_entropy(logits, targets)
        assert abs(float(loss.data) - np.log(v)) < 1e-12

    def test_confident_correct(self):
        logits = np.zeros((1, 2, 5))
        logits[:, :, 3] = 100.0
        loss = nn.cross_entropy(Tensor(logits), np.full((1, 2), 3))
        assert float(loss.data) < 1e-12

    def test_ignore_id(self):
        logits = np.zeros((1, 3, 4))
        logits[0, 0, 1] = 50.0
        targets = np.array([[1, 9, 9]])
        loss = nn.cross_entropy(Tensor(logits), targets, ignore_id=9)
        assert float(loss.data) < 1e-12  # only the confident position counts

    def test_all_ignored_errors(self):
        with pytest.raises(ValueError, match="ignored"):
            nn.cross_entropy(Tensor(np.zeros((1, 2, 3))), np.full((1, 2), 7), ignore_id=7)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        logits = rand_tensor(rng, 2, 5, 6)
        targets = rng.integers(0, 6, size=(2, 5))
        targets[0, 1] = 6  # exercised ignore path
        err = nn.grad_check(
            lambda *a: nn.cross_entropy(logits, targets, ignore_id=6), [logits]
        )
        assert err < 1e-6


class TestGraph:
    def test_backward_visits_once(self):
        # diamond: y = x*x + x*x shares the same node twice
        x = Tensor([3.0], requires_grad=True)
        sq = nn.mul(x, x)
        out = nn.sum_all(nn.add(sq, sq))
        nn.backward(out)
        np.testing.assert_allclose(x.grad, [12.0])

    def test_grad_shapes_match_params(self):
        rng = np.random.default_rng(10)
        x = rand_tensor(rng, 2, 3)
        w = rand_tensor(rng, 3, 4)
        out = nn.sum_all(nn.matmul(x, w))
        nn.backward(out)
        assert x.grad.shape == x.data.shape
        assert w.grad.shape == w.data.shape

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            nn.backward(nn.mul(x, 2.0))

    def test_no_grad_suppresses_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with nn.no_grad():
            out = nn.mul(x, 2.0)
        assert out._backward_fn is None and not out.requires_grad

    def test_concat_and_getitem_gradient(self):
        rng = np.random.default_rng(11)
        a = rand_tensor(rng, 2, 3, 2)
        b = rand_tensor(rng, 2, 3, 3)
        wts = rng.normal(0, 1, size=(2, 2, 3))
        def f(*args):
            cat = nn.concat([a, b], axis=2)
            return scalarize(cat[:, 1:3, :3], wts)
        assert nn.grad_check(f, [a, b]) < 1e-6

    def test_embedding_gradient(self):
        rng = np.random.default_rng(12)
        table = rand_tensor(rng, 7, 4)
        ids = rng.integers(0, 7, size=(2, 5))
        wts = rng.normal(0, 1, size=(2, 5, 4))
        err = nn.grad_check(lambda *a: scalarize(nn.embedding(table, ids), wts), [table])
        assert err < 1e-6

    def test_determinism(self):
        rng1 = np.random.default_rng(13)
        rng2 = np.random.default_rng(13)
        a1 = rng1.normal(size=(8, 8))
        a2 = rng2.normal(size=(8, 8))
        out1 = nn.matmul(Tensor(a1), Tensor(a1)).data
        out2 = nn.matmul(Tensor(a2), Tensor(a2)).data
        assert (out1 == out2).all()
