import numpy as np
import pytest

from latentda.errors import DimensionError, NonFiniteError, UsageError
from latentda.gradcheck import numeric_gradient, relative_error
from latentda.layers import BatchNorm, Linear, ReLU, softmax, softmax_backward
from oracles import batchnorm_loops


class TestLinear:
    def test_backward_matches_finite_differences(self, rng):
        lin = Linear(4, 3, rng)
        x = rng.normal(size=(5, 4))
        proj = rng.normal(size=(5, 3))

        def loss():
            return float(np.sum(proj * lin.forward(x)))

        lin.forward(x)
        lin.zero_grad()
        dx = lin.backward(proj)
        assert relative_error(dx, numeric_gradient(loss, x)) < 1e-7
        for name in ("weight", "bias"):
            g = lin.grads[name].copy()
            assert relative_error(g, numeric_gradient(loss, lin.params[name])) < 1e-7

    def test_zero_init(self):
        lin = Linear(3, 2, zero=True)
        assert not lin.params["weight"].any()


class TestSoftmax:
    def test_rows_sum_to_one_under_large_logits(self):
        p = softmax(np.array([[1000.0, 1001.0, 999.0], [-5.0, 0.0, 5.0]]))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)
        assert np.all(p > 0)

    def test_backward(self, rng):
        z = rng.normal(size=(4, 3))
        proj = rng.normal(size=(4, 3))
        p = softmax(z)
        analytic = softmax_backward(p, proj)
        numeric = numeric_gradient(lambda: float(np.sum(proj * softmax(z))), z)
        assert relative_error(analytic, numeric) < 1e-7

    def test_nan_rejected(self):
        with pytest.raises(NonFiniteError):
            softmax(np.array([[0.0, np.nan]]))


class TestReLU:
    def test_mask(self):
        r = ReLU()
        y = r.forward(np.array([[-1.0, 0.0, 2.0]]))
        assert y.tolist() == [[0.0, 0.0, 2.0]]
        assert r.backward(np.ones((1, 3))).tolist() == [[0.0, 0.0, 1.0]]


class TestBatchNorm:
    def test_forward_matches_loop_reference(self, rng):
        x = rng.normal(size=(7, 3)) * 4 + 2
        bn = BatchNorm(3, eps=1e-5, affine=False)
        np.testing.assert_allclose(bn.forward(x), batchnorm_loops(x.tolist(), 1e-5), atol=1e-13)

    def test_backward_matches_finite_differences(self, rng):
        bn = BatchNorm(3)
        bn.params["scale"][:] = rng.uniform(0.5, 2, 3)
        bn.params["shift"][:] = rng.normal(size=3)
        x = rng.normal(size=(6, 3))
        proj = rng.normal(size=(6, 3))

        def loss():
            return float(np.sum(proj * bn.forward(x)))

        bn.forward(x)
        bn.zero_grad()
        dx = bn.backward(proj)
        assert relative_error(dx, numeric_gradient(loss, x)) < 1e-6
        for name in ("scale", "shift"):
            g = bn.grads[name].copy()
            assert relative_error(g, numeric_gradient(loss, bn.params[name])) < 1e-6

    def test_running_statistics(self):
        bn = BatchNorm(1, momentum=0.5)
        bn.forward(np.array([[1.0], [3.0]]))
        assert bn.running_mean.tolist() == [1.0]      # 0.5 * 0 + 0.5 * 2
        assert bn.running_var.tolist() == [1.0]       # 0.5 * 1 + 0.5 * 1
        y = bn.forward(np.array([[1.0]]), train=False)
        assert y[0, 0] == pytest.approx(0.0 / np.sqrt(1.0 + 1e-5))

    def test_single_sample_training_batch(self):
        with pytest.raises(DimensionError):
            BatchNorm(2).forward(np.ones((1, 2)))

    def test_backward_before_forward(self):
        with pytest.raises(UsageError):
            BatchNorm(2).backward(np.ones((2, 2)))
