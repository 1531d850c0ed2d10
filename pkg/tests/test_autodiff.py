import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unipool.autodiff import (Parameter, Tape, Tensor, add, backward, cross_entropy, div, exp, finite_diff_grad,
                              flatten, get_dtype, linear, log, matmul, mean, mul, neg, no_grad, precision,
                              relu, reshape, scale, sgd_step, sigmoid, sub, transpose)
from unipool.autodiff import sum as tsum
from unipool.autodiff.gradcheck import relative_error

from helpers import max_grad_error
from oracles import cross_entropy_naive, matmul_naive


# ----------------------------------------------------------------- forward values

def test_add_elementwise():
    assert add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data.tolist() == [4.0, 6.0]


def test_scale_by_one_is_identity(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(scale(x, 1.0).data, x.data)


def test_exp_derivative_at_zero():
    x = Parameter(np.zeros(1))
    with Tape() as tape:
        y = tsum(exp(x))
    backward(y, tape)
    assert x.grad[0] == 1.0


def test_matmul_identity_and_dot():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, matmul_naive(a, b), rtol=0, atol=1e-12)


def test_relu_values():
    assert relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]


def test_cross_entropy_uniform_logits_is_log_k():
    loss = cross_entropy(Tensor(np.zeros((5, 10))), np.arange(5))
    assert loss.item() == pytest.approx(math.log(10), abs=1e-12)
    assert loss.item() == pytest.approx(2.302585, abs=1e-6)


def test_cross_entropy_matches_direct_formula(rng):
    logits = rng.normal(size=(6, 4)) * 3
    labels = rng.integers(0, 4, 6)
    assert cross_entropy(Tensor(logits), labels).item() == pytest.approx(cross_entropy_naive(logits, labels),
                                                                         abs=1e-12)


def test_cross_entropy_is_stable_for_huge_logits():
    loss = cross_entropy(Tensor([[1000.0, 0.0]]), [0])
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError, match="labels"):
        cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


# ----------------------------------------------------------------- errors

def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_scalar_operand_broadcasts():
    out = mul(Tensor([2.0]), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    assert out.data.tolist() == [[2.0, 4.0], [6.0, 8.0]]


def test_no_general_broadcasting():
    with pytest.raises(ValueError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


def test_matmul_inner_mismatch():
    with pytest.raises(ValueError, match="inner"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_non_finite_result_is_an_error():
    with pytest.raises(FloatingPointError):
        log(Tensor([0.0]))
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        exp(Tensor([1e4]))


def test_backward_requires_scalar(rng):
    x = Parameter(rng.normal(size=3))
    with Tape() as tape:
        y = mul(x, x)
    with pytest.raises(ValueError, match="scalar"):
        backward(y, tape)


# ----------------------------------------------------------------- backward semantics

def test_sum_gradient_is_ones():
    x = Parameter(np.arange(4.0).reshape(2, 2))
    with Tape() as tape:
        y = tsum(x)
    backward(y, tape)
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_zero_times_x_gives_zero_gradient(rng):
    x = Parameter(rng.normal(size=(2, 2)))
    with Tape() as tape:
        y = tsum(scale(x, 0.0))
    backward(y, tape)
    np.testing.assert_array_equal(x.grad, np.zeros((2, 2)))


def test_unreached_parameter_keeps_zero_grad(rng):
    x, unused = Parameter(rng.normal(size=3)), Parameter(rng.normal(size=3))
    with Tape() as tape:
        y = tsum(mul(x, x))
    backward(y, tape)
    np.testing.assert_array_equal(unused.grad, np.zeros(3))


def test_reused_input_accumulates():
    x = Parameter(np.array([3.0]))
    with Tape() as tape:
        y = tsum(add(mul(x, x), x))  # x^2 + x
    backward(y, tape)
    assert x.grad[0] == pytest.approx(7.0)


def test_tape_is_topologically_ordered(rng):
    x = Parameter(rng.normal(size=3))
    with Tape() as tape:
        tsum(exp(mul(x, x)))
    produced = set()
    for node in tape.nodes:
        for inp in node.inputs:
            assert id(inp) in produced or inp is x or not inp.requires_grad
        produced.add(id(node.output))


def test_no_grad_records_nothing(rng):
    x = Parameter(rng.normal(size=3))
    with Tape() as tape, no_grad():
        tsum(mul(x, x))
    assert len(tape) == 0


def test_ops_do_not_mutate_inputs(rng):
    a, b = Parameter(rng.normal(size=(3, 3))), Parameter(rng.normal(size=(3, 3)))
    before = a.data.copy(), b.data.copy()
    with Tape() as tape:
        y = tsum(relu(add(matmul(a, b), div(a, add(mul(b, b), 1.0)))))
    backward(y, tape)
    np.testing.assert_array_equal(a.data, before[0])
    np.testing.assert_array_equal(b.data, before[1])


def test_replay_is_bitwise_deterministic():
    def run():
        r = np.random.default_rng(3)
        a, b = Parameter(r.normal(size=(4, 5))), Parameter(r.normal(size=(5, 2)))
        with Tape() as tape:
            y = tsum(sigmoid(matmul(a, b)))
        backward(y, tape)
        return y.data.tobytes() + a.grad.tobytes() + b.grad.tobytes()

    assert run() == run()


def test_precision_switch():
    with precision(32):
        assert Tensor([1.0]).data.dtype == np.float32
        assert get_dtype() is np.float32
    assert Tensor([1.0]).data.dtype == np.float64


# ----------------------------------------------------------------- finite-difference oracle

def test_finite_diff_of_square():
    p = Parameter(np.array([3.0]))
    g = finite_diff_grad(lambda: float(p.data[0] ** 2), p, 1e-5)
    assert abs(g[0] - 6.0) < 1e-8


def test_finite_diff_of_constant_is_zero():
    p = Parameter(np.ones(4))
    np.testing.assert_array_equal(finite_diff_grad(lambda: 2.5, p), np.zeros(4))


def test_five_point_stencil_is_exact_on_cubics():
    p = Parameter(np.array([2.0]))
    g = finite_diff_grad(lambda: float(p.data[0] ** 3), p, 1e-2, stencil=5)
    assert g[0] == pytest.approx(12.0, abs=1e-10)
    with pytest.raises(ValueError, match="stencil"):
        finite_diff_grad(lambda: 0.0, p, stencil=4)


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12]), floor=1e-6)[0] == pytest.approx(1e-6)


UNARY = {
    "neg": neg,
    "exp": exp,
    "log": lambda a: log(add(mul(a, a), 1.0)),
    "relu": relu,
    "sigmoid": sigmoid,
    "scale": lambda a: scale(a, -1.7),
    "sum_axis": lambda a: tsum(a, axis=1),
    "mean": lambda a: mean(a, axis=0),
    "reshape": lambda a: reshape(a, (-1,)),
    "transpose": lambda a: transpose(a, (1, 0)),
    "flatten": flatten,
}
BINARY = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": lambda a, b: div(a, add(mul(b, b), 0.5)),
}


@settings(max_examples=60, deadline=None)
@given(op=st.sampled_from(sorted(UNARY)), rows=st.integers(1, 4), cols=st.integers(1, 4),
       seed=st.integers(0, 2**31 - 1))
def test_unary_gradients(op, rows, cols, seed):
    x = Parameter(np.random.default_rng(seed).uniform(-1, 1, (rows, cols)))
    assert max_grad_error(UNARY[op], [x], seed) < 1e-5


@settings(max_examples=60, deadline=None)
@given(op=st.sampled_from(sorted(BINARY)), rows=st.integers(1, 4), cols=st.integers(1, 4),
       scalar_b=st.booleans(), seed=st.integers(0, 2**31 - 1))
def test_binary_gradients(op, rows, cols, scalar_b, seed):
    r = np.random.default_rng(seed)
    a = Parameter(r.uniform(-1, 1, (rows, cols)))
    b = Parameter(r.uniform(-1, 1, (1,) if scalar_b else (rows, cols)))
    assert max_grad_error(BINARY[op], [a, b], seed) < 1e-5


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 5), k=st.integers(1, 5), n=st.integers(1, 5), seed=st.integers(0, 2**31 - 1))
def test_matmul_and_linear_gradients(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = Parameter(r.uniform(-1, 1, (m, k))), Parameter(r.uniform(-1, 1, (k, n)))
    assert max_grad_error(matmul, [a, b], seed) < 1e-5
    w, bias = Parameter(r.uniform(-1, 1, (n, k))), Parameter(r.uniform(-1, 1, n))
    assert max_grad_error(linear, [a, w, bias], seed) < 1e-5


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 5), k=st.integers(2, 6), seed=st.integers(0, 2**31 - 1))
def test_cross_entropy_gradient(n, k, seed):
    r = np.random.default_rng(seed)
    logits = Parameter(r.uniform(-1, 1, (n, k)))
    labels = r.integers(0, k, n)
    assert max_grad_error(lambda z: cross_entropy(z, labels), [logits], seed) < 1e-5


# ----------------------------------------------------------------- optimizer

def test_sgd_vanilla_step():
    p = Parameter(np.array([1.0, 2.0]))
    p.grad = np.array([0.5, -1.0])
    sgd_step([p], lr=1.0, momentum=0.0, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [0.5, 3.0])
    np.testing.assert_array_equal(p.grad, [0.0, 0.0])


def test_sgd_zero_grad_is_fixed_point():
    p = Parameter(np.array([1.0, -2.0]))
    sgd_step([p], lr=0.1, momentum=0.9, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_sgd_two_momentum_steps():
    p = Parameter(np.array([0.0]))
    for _ in range(2):
        p.grad = np.array([1.0])
        sgd_step([p], lr=0.1, momentum=0.9, weight_decay=0.0)
    assert p.data[0] == pytest.approx(-0.29, abs=1e-15)


def test_sgd_weight_decay_enters_before_momentum():
    p = Parameter(np.array([2.0]))
    p.grad = np.array([0.0])
    sgd_step([p], lr=0.5, momentum=0.9, weight_decay=0.1)
    assert p.momentum_buffer[0] == pytest.approx(0.2)
    assert p.data[0] == pytest.approx(2.0 - 0.5 * 0.2)
