import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmvit.errors import AxisError, ContractError, ShapeError
from cmvit.tensor import (
    Parameter, Tape, Tensor, backward, elementwise, grad_check, matmul, precision, reduce,
    relu, tensor_create,
)


def test_create_zero_fill():
    t = tensor_create([2, 2], 0)
    assert t.shape == (2, 2)
    assert np.all(t.data == 0)
    assert not t.requires_grad


def test_create_explicit_contents():
    assert tensor_create([3], [1, 2, 3]).data.tolist() == [1, 2, 3]


def test_create_length_mismatch():
    with pytest.raises(ShapeError):
        tensor_create([2, 2], [1, 2, 3])


def test_rank0_holds_one_value():
    t = tensor_create([], 7.0)
    assert t.ndim == 0 and t.size == 1 and t.item() == 7.0


def test_default_dtype_is_float32_and_switchable():
    assert Tensor([1.0]).dtype == np.float32
    with precision("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_matmul_identity():
    a = Tensor([[1, 2], [3, 4]])
    assert matmul(Tensor(np.eye(2)), a).data.tolist() == [[1, 2], [3, 4]]


def test_matmul_hand_product():
    out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5], [6]]))
    assert out.data.tolist() == [[17], [39]]


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_rejects_rank3():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 2, 2))), Tensor(np.ones((2, 2))))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_matmul_identity_bitwise(n, m, seed):
    a = np.random.default_rng(seed).normal(size=(n, m)).astype(np.float32)
    assert np.array_equal(matmul(Tensor(np.eye(n)), Tensor(a)).data, a)
    assert np.array_equal(matmul(Tensor(a), Tensor(np.eye(m))).data, a)


def test_elementwise_examples():
    assert elementwise("add", Tensor([1, 2]), Tensor([0, 0])).data.tolist() == [1, 2]
    assert elementwise("mul", Tensor([2, 3]), Tensor([4, 5])).data.tolist() == [8, 15]
    assert elementwise("sub", Tensor([2, 3]), Tensor([4, 5])).data.tolist() == [-2, -2]


def test_elementwise_bad_shapes():
    with pytest.raises(ShapeError):
        elementwise("add", Tensor(np.ones((2, 2))), Tensor(np.ones(3)))
    with pytest.raises(ShapeError):
        elementwise("mul", Tensor(np.ones(3)), Tensor(np.ones((2, 3))))


def test_elementwise_unknown_kind():
    with pytest.raises(ContractError):
        elementwise("div", Tensor([1.0]), Tensor([1.0]))


def test_bias_broadcast_and_grad():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Parameter(np.array([1.0, 2.0, 3.0]))
    y = x + b
    assert y.data.tolist() == [[2, 3, 4], [2, 3, 4]]
    backward(y.sum())
    assert b.grad.tolist() == [2, 2, 2]


def test_reduce_examples():
    assert reduce("sum", Tensor([1, 2, 3]), "all").item() == 6
    assert reduce("mean", Tensor([[1, 3], [5, 7]]), 1).data.tolist() == [2, 6]


def test_reduce_bad_axis():
    with pytest.raises(AxisError):
        reduce("sum", Tensor([1]), 5)


def test_backward_sum():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(x.sum())
    assert x.grad.tolist() == [1, 1, 1]


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward((x * x).sum())
    assert x.grad.tolist() == [2, 4]


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_relu_values_and_subgradient():
    assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]
    x = Tensor([-1.0, 2.0], requires_grad=True)
    backward(relu(x).sum())
    assert x.grad.tolist() == [0, 1]
    z = Tensor([0.0], requires_grad=True)
    backward(relu(z).sum())
    assert z.grad.tolist() == [0]


def test_residual_gradient_is_identity_plus_branch(f64, rng):
    w = Tensor(rng.normal(size=(4, 4)))

    def f(t):
        return matmul(t, w)

    x1 = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    backward((x1 + f(x1)).sum())
    x2 = Tensor(x1.data, requires_grad=True)
    backward(f(x2).sum())
    np.testing.assert_allclose(x1.grad, x2.grad + 1.0, atol=1e-6)


def test_residual_gradient_matches_finite_differences(f64, rng):
    w = Tensor(rng.normal(size=(4, 4)))
    x = Tensor(rng.normal(size=(2, 4)))
    assert grad_check(lambda t: (t + matmul(t, w)).sum(), x) < 1e-5


def test_grads_accumulate_across_calls():
    p = Parameter(np.array([1.0, 2.0]))
    backward((p * 3.0).sum())
    backward((p * 3.0).sum())
    assert p.grad.tolist() == [6, 6]
    p.zero_grad()
    assert p.grad.tolist() == [0, 0]


def test_unreachable_parameter_keeps_zero_grad():
    used = Parameter(np.ones(2))
    unused = Parameter(np.ones(2))
    backward((used * 2.0).sum())
    assert unused.grad.tolist() == [0, 0]
    assert unused.grad.shape == unused.shape


def test_tape_is_strict_reverse_execution_order():
    x = Tensor([1.0, 2.0], requires_grad=True)
    a = x * 2.0
    b = a + x
    c = relu(b)
    loss = c.sum()
    tape = Tape.from_output(loss)
    assert tape.records == [loss, c, b, a, x]
    seqs = [n._seq for n in tape.records]
    assert seqs == sorted(seqs, reverse=True)


def test_tape_replay_deterministic(rng):
    w_init = rng.normal(size=(5, 3))
    xin = rng.normal(size=(4, 5))
    grads = []
    for _ in range(2):
        w = Parameter(w_init)
        x = Tensor(xin)
        loss = relu(matmul(x, w)).mean() + (w * w).sum()
        backward(loss)
        grads.append(w.grad.copy())
    assert np.array_equal(grads[0], grads[1])


def test_grad_check_sum_is_exact(f64, rng):
    x = Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda t: t.sum(), x) < 1e-12


def test_grad_check_sum_of_squares(f64, rng):
    x = Tensor(rng.normal(size=(5,)))
    assert grad_check(lambda t: (t * t).sum(), x, step=1e-3) < 1e-5


def test_grad_check_needs_scalar(f64):
    with pytest.raises(ContractError):
        grad_check(lambda t: t * 2.0, Tensor([1.0, 2.0]))
