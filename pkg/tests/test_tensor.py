import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentda.errors import DimensionError, DomainError, NonFiniteError
from latentda.tensor import Tensor, matmul, reduce
from oracles import matmul_loops


class TestConstruction:
    def test_shape_and_flat_data(self):
        t = Tensor([1, 2, 3, 4, 5, 6], shape=(2, 3))
        assert t.shape == (2, 3)
        assert t.rank == 2
        assert t.data.tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]

    def test_storage_is_read_only(self):
        t = Tensor([[1.0, 2.0]])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_bad_shape(self):
        with pytest.raises(DimensionError):
            Tensor([1, 2, 3], shape=(2, 2))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, float("nan")])


class TestElementwise:
    def test_no_broadcasting_between_tensors(self):
        with pytest.raises(DimensionError):
            Tensor([[1.0, 2.0]]) + Tensor([[1.0], [2.0]])

    def test_scalar_operands(self):
        t = Tensor([1.0, 2.0])
        assert (t * 3 + 1).tolist() == [4.0, 7.0]
        assert (1 - t).tolist() == [0.0, -1.0]

    def test_log_of_negative(self):
        with pytest.raises(DomainError):
            Tensor([1.0, -1.0]).log()

    def test_division_by_zero_is_caught(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0]) / 0.0

    def test_exp_overflow_is_caught(self):
        with pytest.raises(NonFiniteError):
            Tensor([1000.0]).exp()


class TestMatmul:
    def test_against_triple_loop(self, rng):
        for _ in range(10):
            n, k, m = rng.integers(1, 7, size=3)
            a = rng.normal(size=(n, k))
            b = rng.normal(size=(k, m))
            got = matmul(Tensor(a), Tensor(b)).numpy()
            np.testing.assert_allclose(got, matmul_loops(a.tolist(), b.tolist()), rtol=1e-13, atol=1e-13)

    def test_associativity(self, rng):
        a, b, c = (Tensor(rng.normal(size=s)) for s in [(3, 4), (4, 5), (5, 2)])
        np.testing.assert_allclose(((a @ b) @ c).numpy(), (a @ (b @ c)).numpy(), rtol=1e-12, atol=1e-12)

    def test_inner_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestReshapeReduce:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
    def test_reshape_round_trip(self, dims):
        size = int(np.prod(dims))
        t = Tensor(np.arange(size, dtype=float))
        back = t.reshape(dims).reshape((size,))
        assert back == t

    def test_reduce_kinds(self):
        t = Tensor([[1.0, 5.0], [3.0, 2.0]])
        assert reduce(t, 0, "sum").tolist() == [4.0, 7.0]
        assert t.reduce(1, "max").tolist() == [5.0, 3.0]
        assert reduce(t, 1, "mean").tolist() == [3.0, 2.5]

    def test_rank_one_reduces_to_single_value(self):
        assert reduce(Tensor([1.0, 2.0, 3.0]), 0).shape == (1,)

    def test_bad_axis(self):
        with pytest.raises(DimensionError):
            reduce(Tensor([1.0]), 1)
