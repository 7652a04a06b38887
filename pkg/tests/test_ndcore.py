"""Tests for matrix nodes, reverse-mode gradients and the gradient oracle."""

import math

import numpy as np
import pytest

from rankmvml.errors import ContractError, DimensionError
from rankmvml.ndcore import (
    EPS,
    Node,
    RngStream,
    clamp_min,
    const,
    cosine_sim,
    detach,
    elementwise,
    exp,
    grad_check,
    l2_normalize_rows,
    log,
    matmul,
    mean_all,
    pairwise_cosine,
    reduce,
    relu,
    row_mean,
    row_sum,
    sigmoid,
    softmax_rows,
    sqrt,
    sum_all,
    transpose,
)


# =============================================================================
# VALUES
# =============================================================================


def test_matmul_values():
    a = const([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, const([[1.0], [1.0]])).value, [[3.0], [7.0]])
    assert np.array_equal(matmul(const(np.eye(2)), a).value, a.value)
    assert np.array_equal(matmul(const(np.zeros((2, 2))), a).value, np.zeros((2, 2)))


def test_matmul_dimension_error_names_both_shapes():
    with pytest.raises(DimensionError) as excinfo:
        matmul(const(np.ones((2, 3))), const(np.ones((2, 3))))
    assert "2x3 vs 2x3" in str(excinfo.value)


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        elementwise("add", const(np.ones((2, 3))), const(np.ones((3, 2))))


def test_elementwise_unknown_operation():
    with pytest.raises(ContractError):
        elementwise("pow", const([[1.0]]))


def test_log_clamp():
    assert log(clamp_min(const([[1.0]]), 1e-12)).item() == 0.0
    assert math.isclose(log(clamp_min(const([[0.0]]), 1e-12)).item(), math.log(1e-12))
    assert math.isclose(log(const([[0.0]])).item(), -27.631021115928547)


def test_mul_by_ones_is_identity():
    a = np.array([[1.5, -2.0], [0.25, 3.0]])
    assert np.array_equal(elementwise("mul", const(a), const(np.ones((2, 2)))).value, a)


def test_div_clamps_denominator():
    assert elementwise("div", const([[1.0]]), const([[0.0]])).item() == 1.0 / EPS


def test_reductions():
    x = const([[1.0, 2.0], [3.0, 4.0]])
    assert reduce("sum", x).item() == 10.0
    assert reduce("mean", const(np.zeros((3, 2)))).item() == 0.0
    summed = reduce("row_sum", const([[1.0, 1.0], [2.0, 2.0]])).value
    assert np.array_equal(summed, [[2.0], [4.0]])
    assert np.array_equal(reduce("row_mean", x).value, [[1.5], [3.5]])


def test_softmax_rows():
    assert np.allclose(softmax_rows(const([[0.0, 0.0]])).value, [[0.5, 0.5]])
    skewed = softmax_rows(const([[0.0, math.log(3.0)]])).value
    assert np.allclose(skewed, [[0.25, 0.75]])
    assert softmax_rows(const([[123.4]])).item() == 1.0
    big = softmax_rows(const([[1000.0, -1000.0, 3.0], [-5.0, 2.0, 2.0]])).value
    assert np.all(np.abs(big.sum(axis=1) - 1.0) <= 1e-12)


def test_sigmoid_values_and_clamp():
    assert sigmoid(const([[0.0]])).item() == 0.5
    assert math.isclose(sigmoid(const([[math.log(3.0)]])).item(), 0.75)
    assert sigmoid(const([[800.0]])).item() == 1.0 - EPS
    assert sigmoid(const([[-800.0]])).item() == EPS


def test_l2_normalize_rows():
    assert np.allclose(l2_normalize_rows(const([[3.0, 4.0]])).value, [[0.6, 0.8]])
    assert np.array_equal(l2_normalize_rows(const([[0.0, 0.0]])).value, [[0.0, 0.0]])
    rows = np.random.default_rng(0).standard_normal((6, 4))
    norms = np.linalg.norm(l2_normalize_rows(const(rows)).value, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-10)


def test_cosine_sim():
    same = cosine_sim(const([[1.0, 0.0]]), const([[1.0, 0.0]])).item()
    assert math.isclose(same, 1.0)
    assert cosine_sim(const([[1.0, 0.0]]), const([[0.0, 1.0]])).item() == 0.0
    diagonal = cosine_sim(const([[1.0, 1.0]]), const([[1.0, 0.0]])).item()
    assert math.isclose(diagonal, 1 / math.sqrt(2))


def test_cosine_sim_symmetric_and_scale_invariant():
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((1, 5)), rng.standard_normal((1, 5))
    base = cosine_sim(const(x), const(y)).item()
    assert math.isclose(base, cosine_sim(const(y), const(x)).item(), rel_tol=1e-12)
    scaled = cosine_sim(const(-2.0 * x), const(3.0 * y)).item()
    assert math.isclose(scaled, -base, rel_tol=1e-12)


def test_pairwise_cosine_matches_cosine_sim():
    x = np.random.default_rng(2).standard_normal((4, 3))
    grid = pairwise_cosine(const(x)).value
    for i in range(4):
        for j in range(4):
            pair = cosine_sim(const(x[[i]]), const(x[[j]])).item()
            assert math.isclose(grid[i, j], pair, abs_tol=1e-12)


# =============================================================================
# GRAPH MECHANICS
# =============================================================================


def test_backward_requires_scalar_root():
    with pytest.raises(ContractError):
        Node.leaf(np.ones((2, 2))).backward()


def test_shared_node_accumulates_gradient():
    x = Node.leaf([[3.0]])
    (x * x + x).backward()
    assert x.grad[0, 0] == 7.0


def test_detach_blocks_gradient():
    x = Node.leaf([[2.0, 1.0]])
    y = Node.leaf([[1.0, 1.0]])
    sum_all(detach(x) * y).backward()
    assert x.grad is None
    assert np.array_equal(y.grad, [[2.0, 1.0]])


def test_numpy_operand_on_the_left():
    x = Node.leaf([[1.0, 2.0]])
    out = sum_all(np.array([[3.0, 4.0]]) * x)
    out.backward()
    assert out.item() == 11.0
    assert np.array_equal(x.grad, [[3.0, 4.0]])


def test_broadcast_gradient_is_summed():
    bias = Node.leaf(np.zeros((1, 3)))
    sum_all(const(np.ones((4, 3))) + bias).backward()
    assert np.array_equal(bias.grad, [[4.0, 4.0, 4.0]])


def test_clamp_min_zero_gradient_below_threshold():
    x = Node.leaf([[0.5, 2.0]])
    sum_all(clamp_min(x, 1.0)).backward()
    assert np.array_equal(x.grad, [[0.0, 1.0]])


# =============================================================================
# GRADIENT ORACLE
# =============================================================================


def test_grad_check_sum_of_squares():
    report = grad_check(
        lambda p: sum_all(p["theta"] * p["theta"]), {"theta": [[1.0, 2.0]]}
    )
    assert report.max_rel_error < 1e-6
    assert report.passed
    assert report.entries_checked == 2


def test_grad_check_constant_function():
    report = grad_check(lambda p: const([[4.0]]), {"theta": [[1.0, 2.0]]})
    assert report.max_rel_error == 0.0


def test_grad_check_rejects_non_scalar():
    with pytest.raises(ContractError):
        grad_check(lambda p: p["theta"] * 2.0, {"theta": [[1.0, 2.0]]})


def test_grad_check_catches_wrong_gradient():
    def bad_square(x):
        def backward(g):
            x._accumulate(g * 3.0 * x.value)

        return Node(x.value**2, (x,), backward)

    report = grad_check(
        lambda p: sum_all(bad_square(p["theta"])), {"theta": [[1.0, -2.0]]}
    )
    assert not report.passed
    assert report.worst_parameter == "theta"


def test_grad_check_leaves_params_untouched():
    params = {"theta": np.array([[0.3, -0.7]])}
    grad_check(lambda p: sum_all(exp(p["theta"])), params)
    assert np.array_equal(params["theta"], [[0.3, -0.7]])


UNARY_OPS = {
    "exp": lambda x: exp(x),
    "log": lambda x: log(x * x + 0.5),
    "sqrt": lambda x: sqrt(x * x + 0.5),
    "sigmoid": lambda x: sigmoid(x),
    "relu": lambda x: relu(x),
    "softmax_rows": lambda x: softmax_rows(x) * const(np.arange(1.0, 1.0 + x.cols)),
    "l2_normalize_rows": lambda x: l2_normalize_rows(x)
    * const(np.arange(1.0, 1.0 + x.cols)),
    "pairwise_cosine": lambda x: pairwise_cosine(x)
    * const(np.arange(1.0, 1.0 + x.rows)),
    "row_mean": lambda x: row_mean(x) * row_sum(x),
    "mean_all": lambda x: mean_all(x * x),
    "transpose": lambda x: transpose(x) @ x,
    "div": lambda x: x / (x * x + 1.0),
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
@pytest.mark.parametrize("seed", range(3))
def test_operation_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    rows, cols = rng.integers(2, 9, size=2)
    x = rng.standard_normal((rows, cols))
    if name == "relu":
        x = np.where(np.abs(x) < 0.1, 0.5, x)
    report = grad_check(lambda p: sum_all(UNARY_OPS[name](p["x"])), {"x": x})
    assert report.passed, f"{name}: {report.max_rel_error:.3e}"


@pytest.mark.parametrize("seed", range(3))
def test_binary_operation_gradients(seed):
    rng = np.random.default_rng(seed)
    params = {
        "a": rng.standard_normal((3, 4)),
        "b": rng.standard_normal((4, 2)),
        "c": rng.standard_normal((1, 2)),
    }

    def f(p):
        h = matmul(p["a"], p["b"]) + p["c"]
        return sum_all((h - p["c"]) * h) + cosine_sim(p["c"], p["c"] * 2.0 + 1.0)

    assert grad_check(f, params).passed


# =============================================================================
# RANDOM STREAMS
# =============================================================================


def test_rng_stream_determinism():
    a = RngStream(11).child("x").generator().standard_normal(5)
    b = RngStream(11).child("x").generator().standard_normal(5)
    c = RngStream(11).child("y").generator().standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("seed", [-1, 2**64, 1.5])
def test_rng_stream_rejects_bad_seed(seed):
    with pytest.raises(ContractError):
        RngStream(seed)
