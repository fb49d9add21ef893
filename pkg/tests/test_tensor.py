"""
Unit tests for the tensor/autodiff core.
"""

import numpy as np
import pytest

from src.core import tensor as T
from src.core.errors import ConfigError, NumericalError, ShapeError, TapeError
from src.core.rng import Rng
from src.core.tensor import Tensor


class TestForward:
    """Forward values of individual ops."""

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(Rng(0).normal((3, 5)))
        out = T.softmax_lastdim(x)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(3), rtol=1e-6)
        assert np.all(out.data > 0)

    def test_softmax_is_shift_invariant(self):
        x = Rng(1).normal(6)
        a = T.softmax_lastdim(Tensor(x)).data
        b = T.softmax_lastdim(Tensor(x + 100.0)).data
        np.testing.assert_allclose(a, b, rtol=1e-5)

    def test_layernorm_normalizes_last_axis(self):
        x = Tensor(Rng(2).normal((4, 16)) * 3.0 + 1.0)
        out = T.layernorm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.data.std(axis=-1), 1.0, rtol=1e-3)

    def test_batched_matmul(self):
        a = Rng(3).normal((2, 3, 4))
        b = Rng(4).normal((4, 5))
        out = T.matmul(Tensor(a), Tensor(b))
        assert out.shape == (2, 3, 5)
        np.testing.assert_allclose(out.data, a @ b, rtol=1e-5)

    def test_where_selects_bit_exact(self):
        a = Rng(5).normal(8)
        b = Rng(6).normal(8)
        cond = np.array([True, False] * 4)
        out = T.where(cond, Tensor(a), Tensor(b))
        assert np.array_equal(out.data[cond], a[cond])
        assert np.array_equal(out.data[~cond], b[~cond])

    def test_mismatched_shapes_raise(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_item_needs_single_value(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones(2)).item()


class TestBackward:
    """Gradients, tape rules and numerical guards."""

    def test_broadcast_add_gradient_is_summed(self):
        row = Tensor(np.ones(4), requires_grad=True)
        lead = Tensor(np.zeros((2, 3, 4)))
        T.backward(T.sum_(T.add(lead, row)))
        np.testing.assert_array_equal(row.grad, np.full(4, 6.0))

    def test_mul_self_gradient(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        T.backward(T.sum_(T.mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_getitem_repeated_index_accumulates(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        T.backward(T.sum_(T.getitem(x, np.array([1, 1, 3]))))
        np.testing.assert_array_equal(x.grad, [0.0, 2.0, 0.0, 1.0])

    def test_max_gradient_goes_to_first_maximum(self):
        x = Tensor(np.array([1.0, 5.0, 5.0, 2.0]), requires_grad=True)
        T.backward(T.max_(x))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0, 0.0])

    def test_leaf_gradients_accumulate_across_graphs(self):
        x = Tensor(np.ones(3), requires_grad=True)
        T.backward(T.sum_(x))
        T.backward(T.sum_(x))
        np.testing.assert_array_equal(x.grad, np.full(3, 2.0))
        x.zero_grad()
        assert x.grad is None

    def test_detached_branch_gets_no_gradient(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        w = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
        cut = T.mul(x, x).detach()
        T.backward(T.sum_(T.mul(cut, w)))
        assert x.grad is None
        np.testing.assert_array_equal(w.grad, [1.0, 4.0, 9.0])

    def test_second_backward_on_same_graph_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = T.sum_(T.scale(x, 2.0))
        T.backward(loss)
        with pytest.raises(TapeError):
            T.backward(loss)

    def test_reset_tape_allows_second_backward(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = T.sum_(T.scale(x, 2.0))
        T.backward(loss)
        T.reset_tape(loss)
        T.backward(loss)
        np.testing.assert_array_equal(x.grad, np.full(3, 4.0))

    def test_non_scalar_root_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(TapeError):
            T.backward(T.scale(x, 2.0))

    def test_root_without_grad_raises(self):
        with pytest.raises(TapeError):
            T.backward(T.sum_(Tensor(np.ones(3))))

    def test_nan_output_raises_with_diagnostics(self):
        with pytest.raises(NumericalError) as info:
            T.sqrt(Tensor(np.array([-1.0, 4.0])))
        assert info.value.diagnostics["op"] == "sqrt"
        assert info.value.diagnostics["non_finite"] == 1

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericalError):
            Tensor(np.array([np.inf]))


class TestModes:
    """no_grad and precision contexts."""

    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = T.scale(x, 3.0)
        assert not y.requires_grad
        assert y.is_leaf

    def test_precision_switches_dtype_and_restores(self):
        with T.precision(np.float64):
            assert Tensor(1.0).data.dtype == np.float64
        assert Tensor(1.0).data.dtype == np.float32

    def test_precision_rejects_other_dtypes(self):
        with pytest.raises(ConfigError):
            with T.precision(np.float16):
                pass

    def test_clamp_rejects_inverted_bounds(self):
        with pytest.raises(ConfigError):
            T.clamp(Tensor(np.ones(2)), 1.0, -1.0)
