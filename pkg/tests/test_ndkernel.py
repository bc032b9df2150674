import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vaenilm.ndkernel import (
    ContractError,
    EvaluationError,
    Parameter,
    elementwise,
    elementwise_backward,
    grad_check,
    matmul,
    matmul_backward,
    numerical_grad,
    reduce,
    reduce_backward,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)
shapes = st.sampled_from([(3,), (2, 3), (2, 2, 2), (1, 5)])


def test_elementwise_examples():
    assert elementwise("mul", [1, 2], [3, 4]).tolist() == [3, 8]
    x = np.array([1.5, -2.0, 3.0])
    np.testing.assert_array_equal(elementwise("add", x, np.zeros(3)), x)
    np.testing.assert_array_equal(elementwise("mul", [0.5, 2.0], [2.0, 0.5]), [1.0, 1.0])


def test_elementwise_errors():
    with pytest.raises(ContractError):
        elementwise("add", np.zeros(2), np.zeros(3))
    with pytest.raises(ContractError):
        elementwise("div", np.zeros(2), np.ones(2))
    with pytest.raises(ContractError):
        elementwise("add", np.zeros((2, 1)), np.zeros((1, 2)))  # no broadcasting


def test_elementwise_backward_rules():
    a, b, g = np.array([1.0, 2.0]), np.array([3.0, -4.0]), np.array([0.5, 2.0])
    da, db = elementwise_backward("mul", a, b, g)
    np.testing.assert_array_equal(da, g * b)
    np.testing.assert_array_equal(db, g * a)
    da, db = elementwise_backward("sub", a, b, g)
    np.testing.assert_array_equal(db, -g)


@given(shapes.flatmap(lambda s: st.tuples(arrays(np.float64, s, elements=finite),
                                          arrays(np.float64, s, elements=finite))))
def test_add_mul_commute_and_sub_self_is_zero(ab):
    a, b = ab
    np.testing.assert_array_equal(elementwise("add", a, b), elementwise("add", b, a))
    np.testing.assert_array_equal(elementwise("mul", a, b), elementwise("mul", b, a))
    assert not elementwise("sub", a, a).any()


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)
    assert matmul([[1, 2]], [[3], [4]]).tolist() == [[11]]
    np.testing.assert_array_equal(matmul(np.zeros((2, 3)), np.arange(12.0).reshape(3, 4)), np.zeros((2, 4)))
    with pytest.raises(ContractError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    r = rng.normal(size=(3, 2))
    err = grad_check(lambda v: (np.sum(r * (v @ b)), matmul_backward(v, b, r)[0]), a)
    assert err < 1e-8
    err = grad_check(lambda v: (np.sum(r * (a @ v)), matmul_backward(a, v, r)[1]), b)
    assert err < 1e-8


def test_reduce_examples():
    assert reduce("sum", [1, 2, 3]) == 6
    assert reduce("mean", [2, 4]) == 3
    assert reduce("sum", [[1, 2], [3, 4]], axis=1).tolist() == [3, 7]
    with pytest.raises(ContractError):
        reduce("sum", np.zeros((2, 2)), axis=2)
    with pytest.raises(ContractError):
        reduce("max", np.zeros(2))


def test_mean_backward_spreads_one_over_n():
    a = np.zeros((2, 4))
    np.testing.assert_array_equal(reduce_backward("mean", a, np.ones(2), axis=1), np.full((2, 4), 0.25))
    np.testing.assert_array_equal(reduce_backward("sum", a, 3.0), np.full((2, 4), 3.0))


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
              elements=st.integers(-100, 100).map(float)))
def test_sequential_sum_equals_full_sum(a):
    total = a
    for _ in range(a.ndim):
        total = reduce("sum", total, axis=0)
    assert total == reduce("sum", a)


def test_parameter_grad_shape_and_zeroing():
    p = Parameter(np.ones((2, 3)), "w")
    assert p.grad.shape == p.value.shape
    p.accumulate(np.full((2, 3), 2.0))
    p.zero_grad()
    assert not p.grad.any()
    with pytest.raises(ContractError):
        p.accumulate(np.ones(3))
    with pytest.raises(ContractError):
        Parameter(np.ones(2), grad=np.ones(3))


def test_grad_check_examples():
    assert grad_check(lambda x: (np.sum(x ** 2), 2 * x), np.array([1.0, 2.0])) < 1e-8
    relu_sum = lambda x: (np.sum(np.maximum(x, 0)), (x > 0).astype(float))
    assert grad_check(relu_sum, np.array([1.0, -1.0])) < 1e-6
    assert grad_check(lambda x: (3.0, np.zeros_like(x)), np.array([0.3, 0.7])) == 0.0


def test_grad_check_detects_wrong_gradient():
    assert grad_check(lambda x: (np.sum(x ** 2), 3 * x), np.array([1.0, 2.0])) > 0.1


def test_grad_check_non_finite_raises():
    with pytest.raises(EvaluationError), np.errstate(invalid="ignore"):
        grad_check(lambda x: (np.sum(np.log(x)), 1 / x), np.array([1e-5, 1.0]), step=1e-3)
    with pytest.raises(EvaluationError):
        numerical_grad(lambda x: np.inf, np.zeros(2))
    with pytest.raises(ContractError):
        grad_check(lambda x: (0.0, x), np.zeros(2), step=0.0)


def test_grad_check_subsamples_large_tensors():
    calls = []

    def f(x):
        calls.append(1)
        return np.sum(x), np.ones_like(x)

    err, info = grad_check(f, np.zeros(10_001), return_details=True)
    assert err < 1e-8
    assert len(info["coords"]) == 512
    assert len(calls) == 1 + 2 * 512
    _, again = grad_check(f, np.zeros(10_001), return_details=True)
    np.testing.assert_array_equal(info["coords"], again["coords"])


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(0.1, 2, width=64)))
def test_grad_check_on_smooth_functions(x):
    f = lambda v: (np.sum(np.sin(v) * v), np.cos(v) * v + np.sin(v))
    assert grad_check(f, x) < 1e-5
