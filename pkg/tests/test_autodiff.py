import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curiousfl import autodiff as ad
from curiousfl.autodiff import ExprGraph, Tensor, backward, evaluate, grad, input_grad_of_grad_match
from curiousfl.errors import ConfigError, ContractError, NumericError
from curiousfl.model import forward_tensor, mlp, init_params
from curiousfl.rng import stream

from _helpers import central_diff, random_graph_fn, rel_err


def test_evaluate_examples():
    g = ExprGraph.trace(lambda x: x * x, 0.0)
    assert evaluate(g, {0: np.array(3.0)}).value == 9.0
    g = ExprGraph.trace(lambda x, y: x * y, 0.0, 0.0)
    assert evaluate(g, {0: np.array(2.0), 1: np.array(5.0)}).value == 10.0
    g = ExprGraph.trace(lambda x: ad.log_softmax(ad.reshape(x, (1, 2)))[0, 0], np.zeros(2))
    assert evaluate(g, {0: np.zeros(2)}).value == pytest.approx(math.log(0.5), abs=1e-12)


def test_backward_examples():
    g = ExprGraph.trace(lambda x: x * x, 0.0)
    assert backward(evaluate(g, {0: np.array(3.0)}))[0] == 6.0
    g = ExprGraph.trace(lambda x, y: x * y, 0.0, 0.0)
    out = backward(evaluate(g, {0: np.array(2.0), 1: np.array(5.0)}))
    assert (out[0], out[1]) == (5.0, 2.0)
    g = ExprGraph.trace(lambda x: (x * x).sum(), np.zeros(2))
    np.testing.assert_array_equal(backward(evaluate(g, {0: np.array([1.0, -2.0])}))[0], [2.0, -4.0])


def test_graph_is_topologically_ordered():
    g = ExprGraph.trace(random_graph_fn(3), np.zeros(4), np.zeros((3, 4)))
    for nid, node in enumerate(g.nodes):
        assert all(o < nid for o in node.operands)


def test_unused_leaf_gets_zero_gradient():
    g = ExprGraph.trace(lambda x, y: (x * x).sum(), np.zeros(2), np.zeros(3))
    out = backward(evaluate(g, {0: np.ones(2), 1: np.ones(3)}))
    np.testing.assert_array_equal(out[1], np.zeros(3))


def test_unbound_leaf_and_non_scalar_root():
    g = ExprGraph.trace(lambda x: x * 2.0, np.zeros(2))
    with pytest.raises(ContractError):
        evaluate(g, {})
    with pytest.raises(ContractError):
        backward(evaluate(g, {0: np.ones(2)}))


def test_shape_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_non_finite_names_the_node():
    g = ExprGraph.trace(lambda x: ad.log(x), np.ones(1))
    with pytest.raises(NumericError, match="node"):
        evaluate(g, {0: np.array([-1.0])})


@pytest.mark.parametrize("seed", range(20))
def test_random_graphs_match_finite_differences(seed):
    fn = random_graph_fn(seed)
    rng = np.random.default_rng(seed)
    x, W = rng.standard_normal(4), rng.standard_normal((3, 4))
    xt, Wt = Tensor(x, requires_grad=True), Tensor(W, requires_grad=True)
    gx, gW = grad(fn(xt, Wt), [xt, Wt])
    assert rel_err(gx.value, central_diff(lambda v: fn(Tensor(v), Tensor(W)).item(), x)) <= 1e-6
    assert rel_err(gW.value, central_diff(lambda v: fn(Tensor(x), Tensor(v)).item(), W)) <= 1e-6


def test_second_derivative():
    x = Tensor(np.array(2.0), requires_grad=True)
    (g,) = grad(x * x * x, [x], create_graph=True)
    (h,) = grad(g, [x])
    assert h.item() == pytest.approx(12.0)


def test_relu_second_derivative_is_zero():
    x = Tensor(np.array([0.0, 1.5, -2.0]), requires_grad=True)
    (g,) = grad(ad.relu(x).sum(), [x], create_graph=True)
    (h,) = grad(g.sum(), [x])
    np.testing.assert_array_equal(h.value, np.zeros(3))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 50))
@settings(max_examples=40, deadline=None)
def test_linearity(alpha, beta, seed):
    f1, f2 = random_graph_fn(seed), random_graph_fn(seed + 1000)
    rng = np.random.default_rng(seed)
    x, W = rng.standard_normal(4), rng.standard_normal((3, 4))

    def grads(fn):
        xt, Wt = Tensor(x, requires_grad=True), Tensor(W, requires_grad=True)
        return [g.value for g in grad(fn(xt, Wt), [xt, Wt])]

    combo = grads(lambda a, b: f1(a, b) * alpha + f2(a, b) * beta)
    parts = [alpha * p + beta * q for p, q in zip(grads(f1), grads(f2))]
    for c, p in zip(combo, parts):
        np.testing.assert_allclose(c, p, rtol=0, atol=1e-12 * max(1.0, np.abs(p).max()))


def test_reevaluation_is_bit_identical():
    g = ExprGraph.trace(random_graph_fn(7), np.zeros(4), np.zeros((3, 4)))
    rng = np.random.default_rng(0)
    b = {0: rng.standard_normal(4), 1: rng.standard_normal((3, 4))}
    r1, r2 = evaluate(g, b), evaluate(g, b)
    assert r1.value.tobytes() == r2.value.tobytes()
    for k in b:
        assert backward(r1)[k].tobytes() == backward(r2)[k].tobytes()


def _linear_forward(w, x):
    return x @ ad.swap_last(ad.reshape(w, (3, 2)))


def _squared_loss(out, target):
    d = out - target
    return (d * d).sum()


def test_grad_match_linear_squared_loss_fd():
    rng = np.random.default_rng(1)
    w, x, y, tgt = rng.standard_normal(6), rng.standard_normal((1, 2)), rng.standard_normal((1, 3)), rng.standard_normal(6)
    val, dx, dy = input_grad_of_grad_match(_linear_forward, w, x, y, tgt, loss=_squared_loss)
    fx = central_diff(lambda v: input_grad_of_grad_match(_linear_forward, w, v, y, tgt, loss=_squared_loss)[0], x)
    fy = central_diff(lambda v: input_grad_of_grad_match(_linear_forward, w, x, v, tgt, loss=_squared_loss)[0], y)
    assert rel_err(dx, fx) <= 1e-6
    assert rel_err(dy, fy) <= 1e-6


def test_grad_match_zero_at_exact_match():
    rng = np.random.default_rng(2)
    w, x, y = rng.standard_normal(6), rng.standard_normal((1, 2)), rng.standard_normal((1, 3))
    wt = Tensor(w, requires_grad=True)
    (g,) = grad(_squared_loss(_linear_forward(wt, Tensor(x)), Tensor(y)), [wt])
    val, dx, dy = input_grad_of_grad_match(_linear_forward, w, x, y, g.value, loss=_squared_loss)
    assert val == 0.0
    np.testing.assert_array_equal(dx, 0.0)


@pytest.mark.parametrize("activation", ["relu", "tanh", "sigmoid"])
def test_grad_match_mlp_fd(activation):
    spec = mlp(16, 4, hidden=(8,), activation=activation)
    rng = stream(5, "test")
    w = init_params(spec, rng)
    x, labels, tgt = rng.standard_normal((2, 16)), rng.standard_normal((2, 4)), rng.standard_normal(spec.n_params) * 0.1

    def fwd(wt, xt):
        return forward_tensor(spec, wt, xt)

    val, dx, dl = input_grad_of_grad_match(fwd, w, x, labels, tgt)
    fx = central_diff(lambda v: input_grad_of_grad_match(fwd, w, v, labels, tgt)[0], x)
    fl = central_diff(lambda v: input_grad_of_grad_match(fwd, w, x, v, tgt)[0], labels)
    assert rel_err(dx, fx) <= 1e-4
    assert rel_err(dl, fl) <= 1e-4


def test_grad_match_dimension_mismatch():
    with pytest.raises(ContractError):
        input_grad_of_grad_match(_linear_forward, np.zeros(6), np.zeros((1, 2)), np.zeros((1, 3)), np.zeros(5),
                                 loss=_squared_loss)
