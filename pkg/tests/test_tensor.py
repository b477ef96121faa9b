import numpy as np
import pytest
from hypothesis import given, strategies as st

from certcast import tensor as tc


def test_basic_gradients():
    a = tc.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    b = tc.Tensor(np.array([4.0, 5.0, 6.0]), requires_grad=True)
    ((a * b).sum() + (a ** 2).sum()).backward()
    np.testing.assert_allclose(a.grad, [6.0, 9.0, 12.0])
    np.testing.assert_allclose(b.grad, [1.0, 2.0, 3.0])


def test_broadcast_gradient_is_reduced():
    a = tc.Tensor(np.ones((3, 4)), requires_grad=True)
    b = tc.Tensor(np.arange(4.0), requires_grad=True)
    (a * b).sum().backward()
    np.testing.assert_allclose(b.grad, [3.0] * 4)
    np.testing.assert_allclose(a.grad, np.tile(np.arange(4.0), (3, 1)))


def test_matmul_gradient_and_shape_error():
    rng = np.random.default_rng(0)
    A = tc.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    B = tc.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    tc.matmul(A, B).sum().backward()
    np.testing.assert_allclose(A.grad, np.ones((2, 4)) @ B.data.T)
    with pytest.raises(ValueError):
        tc.matmul(A, A)


def test_graph_is_consumed_without_retain():
    x = tc.Tensor(np.array([2.0]), requires_grad=True)
    y = (x * x).sum()
    g1 = tc.grad(y, [x], retain_graph=True)[0]
    g2 = tc.grad(y, [x])[0]
    np.testing.assert_allclose(g1, [4.0])
    np.testing.assert_allclose(g2, [4.0])
    with pytest.raises(tc.GraphConsumedError):
        tc.grad(y, [x])


def test_non_finite_raises():
    x = tc.Tensor(np.array([0.0, 1.0]), requires_grad=True)
    with pytest.raises(tc.NonFiniteError):
        tc.log(x)
    with pytest.raises(tc.NonFiniteError):
        x / tc.Tensor(np.array([0.0, 0.0]))


def test_no_grad_builds_no_graph():
    x = tc.Tensor(np.ones(3), requires_grad=True)
    with tc.no_grad():
        y = (x * 2).sum()
    assert tc.is_grad_enabled()
    assert not y.requires_grad


def test_softmax_rows_sum_to_one():
    x = tc.Tensor(np.random.default_rng(1).normal(size=(4, 7)) * 50)
    np.testing.assert_allclose(tc.softmax(x, axis=-1).data.sum(axis=-1), 1.0, atol=1e-12)


def test_layernorm_statistics():
    x = tc.Tensor(np.random.default_rng(2).normal(3.0, 2.0, size=(5, 16)))
    y = tc.layernorm(x, tc.Tensor(np.ones(16)), tc.Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_index_and_stack_gradients():
    x = tc.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    y = tc.stack([x[:, 0], x[:, 2] * 2.0], axis=-1).sum()
    (g,) = tc.grad(y, [x])
    np.testing.assert_allclose(g, [[1, 0, 2], [1, 0, 2]])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
def test_rfft_irfft_tensor_round_trip(values):
    x = tc.Tensor(np.array(values))
    np.testing.assert_allclose(tc.irfft(tc.rfft(x), len(values)).data, values, atol=1e-10)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=10))
def test_var_gradient_matches_closed_form(values):
    v = np.array(values)
    x = tc.Tensor(v, requires_grad=True)
    (g,) = tc.grad(x.var(), [x])
    np.testing.assert_allclose(g, 2 * (v - v.mean()) / len(v), atol=1e-12)
