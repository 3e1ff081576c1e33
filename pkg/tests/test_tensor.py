import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tgan import tensor as T
from tgan.exceptions import ContractError, DomainError, NonFiniteError, ShapeError
from tgan.gradcheck import FD_TOLERANCE, gradient_error

from grad_cases import GRAD_CASES


class TestForward:
    def test_identity_matmul(self):
        out = T.matmul(T.Tensor(np.eye(2)), T.Tensor([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_row_times_column(self):
        assert T.matmul(T.Tensor([[1, 2]]), T.Tensor([[3], [4]])).data.tolist() == [[11.0]]

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(T.Tensor(0.0)).item() == 0.5

    def test_log_exp_inverse(self):
        assert T.log(T.exp(T.Tensor(1.25))).item() == pytest.approx(1.25, abs=1e-15)

    def test_leaky_relu(self):
        assert T.leaky_relu(T.Tensor(-2.0), 0.2).item() == pytest.approx(-0.4)

    def test_leaky_relu_gradient_at_zero_is_positive_branch(self):
        x = T.Tensor(0.0, requires_grad=True)
        T.leaky_relu(x, 0.2).backward()
        assert x.grad == 1.0

    def test_log_domain_error_carries_index(self):
        with pytest.raises(DomainError) as info:
            T.log(T.Tensor([[1.0, 2.0], [0.0, 3.0]]))
        assert info.value.index == (1, 0)

    def test_binary_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.Tensor([1.0, 2.0]) + T.Tensor([1.0, 2.0, 3.0])

    def test_non_finite_surfaces(self):
        with pytest.raises(NonFiniteError):
            T.exp(T.Tensor([1000.0]))

    def test_softmax_uniform(self):
        np.testing.assert_allclose(T.softmax(T.Tensor(np.zeros(4))).data, 0.25, atol=1e-15)

    def test_softmax_closed_form(self):
        np.testing.assert_allclose(T.softmax(T.Tensor([math.log(2.0), 0.0])).data, [2 / 3, 1 / 3], atol=1e-15)

    def test_softmax_no_overflow(self):
        out = T.softmax(T.Tensor([1000.0, 0.0])).data
        assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)

    def test_mean(self):
        assert T.mean(T.Tensor([1.0, 2.0, 3.0])).item() == 2.0

    def test_empty_reduction(self):
        with pytest.raises(DomainError):
            T.sum(T.Tensor(np.array([])))

    def test_dense_zero(self):
        out = T.dense_layer(T.Tensor(np.ones((3, 2))), T.Tensor(np.zeros((2, 4))), T.Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_dense_scalar(self):
        out = T.dense_layer(T.Tensor([[3.0]]), T.Tensor([[2.0]]), T.Tensor([1.0]))
        assert out.data.tolist() == [[7.0]]

    def test_dense_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.dense_layer(T.Tensor(np.ones((3, 2))), T.Tensor(np.ones((2, 4))), T.Tensor(np.zeros(3)))

    def test_dropout_disabled_in_eval(self, rng):
        x = T.Tensor(np.ones((4, 4)))
        assert T.dropout(x, 0.5, rng, training=False) is x

    def test_dropout_keeps_expectation(self, rng):
        out = T.dropout(T.Tensor(np.ones((200, 200))), 0.3, rng).data
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.7}
        assert out.mean() == pytest.approx(1.0, abs=0.02)


class TestBackward:
    def test_square(self):
        x = T.Tensor(3.0, requires_grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_sigmoid(self):
        x = T.Tensor(0.0, requires_grad=True)
        T.sigmoid(x).backward()
        assert x.grad == 0.25

    def test_mean_gradient(self):
        x = T.Tensor(np.arange(4.0), requires_grad=True)
        T.mean(x).backward()
        np.testing.assert_array_equal(x.grad, 0.25)

    def test_matmul_gradient_against_finite_differences(self):
        a = T.Tensor([[0.3, -0.7]], requires_grad=True)
        b = T.Tensor([[1.0], [1.0]])
        T.sum(T.matmul(a, b)).backward()
        np.testing.assert_allclose(a.grad, [[1.0, 1.0]], atol=1e-12)
        assert gradient_error(lambda: T.sum(T.matmul(a, b)), [a]) < FD_TOLERANCE

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            T.Tensor([1.0, 2.0], requires_grad=True).backward()

    def test_repeated_backward_accumulates(self):
        x = T.Tensor(2.0, requires_grad=True)
        loss = x * x
        loss.backward()
        loss.backward()
        assert x.grad == 8.0

    def test_shared_subexpression(self):
        x = T.Tensor(1.5, requires_grad=True)
        y = T.exp(x)
        (y * y + y).backward()
        assert x.grad == pytest.approx(2 * math.exp(3.0) + math.exp(1.5), rel=1e-14)

    def test_mean_of_rows_scales_single_row_gradient(self, rng):
        W = T.Tensor(rng.normal(size=(3, 1)))
        X = T.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        T.mean(T.sigmoid(T.matmul(X, W))).backward()
        for i in range(5):
            row = T.Tensor(X.data[i:i + 1], requires_grad=True)
            T.sum(T.sigmoid(T.matmul(row, W))).backward()
            np.testing.assert_allclose(X.grad[i], row.grad[0] / 5, rtol=1e-14)


@pytest.mark.parametrize("case", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(case):
    rng = np.random.default_rng(zlib.crc32(case.encode()))
    for _ in range(20):
        fn, inputs = GRAD_CASES[case](rng)
        assert gradient_error(fn, inputs) < FD_TOLERANCE


finite_rows = arrays(np.float64, (3, 5), elements=st.floats(-50, 50))


@given(finite_rows, st.floats(-100, 100))
def test_softmax_is_shift_invariant_probability(x, c):
    s = T.softmax(T.Tensor(x)).data
    assert np.all(s >= 0) and np.all(s <= 1)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(T.softmax(T.Tensor(x + c)).data, s, atol=1e-12)


@given(arrays(np.float64, (2, 4), elements=st.floats(-5, 5)))
def test_softmax_strictly_inside_unit_interval(x):
    s = T.softmax(T.Tensor(x)).data
    assert np.all(s > 0) and np.all(s < 1)
