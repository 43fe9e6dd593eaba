import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from geoaggregator.autodiff import (
    ShapeError,
    Tensor,
    concat,
    grad_enabled,
    masked_softmax,
    matmul,
    no_grad,
    tanhshrink,
)
from oracles import finite_diff, matmul_loop, rel_err, softmax_loop

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def check_grad(build, *arrays, tol=1e-6):
    """Compare backward() against central differences for every input array."""
    ts = [leaf(a) for a in arrays]
    build(*ts).backward()
    for t in ts:
        num = finite_diff(lambda: float(build(*[Tensor(u.data) for u in ts]).data), t.data)
        assert rel_err(t.grad, num) < tol


# -- matmul -----------------------------------------------------------------

def test_matmul_identity():
    X = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(matmul(np.eye(3), X).data, X)


def test_matmul_ones():
    assert np.array_equal(matmul(np.ones((2, 3)), np.ones((3, 2))).data, np.full((2, 2), 3.0))


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    assert np.max(np.abs(matmul(a, b).data - matmul_loop(a, b))) < 1e-12


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_matmul_gradient_rule():
    rng = np.random.default_rng(1)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    (a @ b).sum().backward()
    g = np.ones((3, 2))
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ g)


def test_batched_matmul_broadcast_grad():
    rng = np.random.default_rng(2)
    check_grad(lambda a, b: ((a @ b) ** 2).sum(), rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)))


# -- softmax ----------------------------------------------------------------

def test_softmax_uniform():
    assert np.allclose(masked_softmax(np.zeros(4)).data, 0.25)


def test_softmax_single_survivor():
    assert np.array_equal(masked_softmax(np.zeros(2), np.array([0, 1])).data, [1.0, 0.0])


def test_softmax_loop_oracle():
    rng = np.random.default_rng(3)
    row = rng.normal(size=8)
    mask = np.zeros(8)
    mask[rng.choice(8, 3, replace=False)] = 1
    assert np.max(np.abs(masked_softmax(row, mask).data - softmax_loop(row, mask))) < 1e-12


def test_softmax_fully_masked_row_raises():
    with pytest.raises(ValueError):
        masked_softmax(np.zeros((2, 3)), np.array([[0, 1, 1], [1, 1, 1]]))


@given(hnp.arrays(np.float64, (3, 6), elements=finite), hnp.arrays(np.int8, (3, 6), elements=st.integers(0, 1)))
def test_softmax_masked_exact_zero_and_normalised(logits, mask):
    mask[:, 0] = 0
    w = masked_softmax(logits, mask).data
    assert np.all(w[mask == 1] == 0.0)
    assert np.allclose(w.sum(-1), 1.0, atol=1e-12)


def test_softmax_gradient():
    rng = np.random.default_rng(4)
    mask = np.array([[0, 0, 1, 0], [1, 0, 0, 0]])
    wts = rng.normal(size=(2, 4))
    check_grad(lambda z: (masked_softmax(z, mask) * wts).sum(), rng.normal(size=(2, 4)))


def test_softmax_stable_for_large_logits():
    w = masked_softmax(np.array([1000.0, 1000.0, -1000.0])).data
    assert np.allclose(w, [0.5, 0.5, 0.0])


# -- tanhshrink -------------------------------------------------------------

def test_tanhshrink_values():
    assert tanhshrink(np.array(0.0)).data == 0.0
    assert abs(tanhshrink(np.array(20.0)).data - 19.0) < 1e-8
    assert tanhshrink(np.array(0.5)).data == pytest.approx(0.5 - math.tanh(0.5), abs=1e-15)


@settings(max_examples=30)
@given(st.floats(-4, 4))
def test_tanhshrink_derivative(x):
    t = leaf(x)
    tanhshrink(t).backward()
    assert t.grad == pytest.approx(math.tanh(x) ** 2, abs=1e-14)


# -- elementwise ------------------------------------------------------------

def test_concat_order_and_slice_roundtrip():
    a, b = np.ones((2, 2)), np.full((2, 3), 2.0)
    c = concat([a, b]).data
    assert c.shape == (2, 5) and np.array_equal(c[:, :2], a)
    t = Tensor(np.arange(10.0).reshape(2, 5))
    assert np.array_equal(concat([t[:, :2], t[:, 2:]]).data, t.data)


def test_concat_shape_error():
    with pytest.raises(ShapeError):
        concat([np.ones((2, 2)), np.ones((3, 2))])


def test_mean():
    assert Tensor(np.array([1.0, 2.0, 3.0])).mean().item() == 2.0


def test_add_shape_error():
    with pytest.raises((ShapeError, ValueError)):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


@pytest.mark.parametrize(
    "fn",
    [
        lambda a, b: (a + b * 2 - a / (b.abs() + 1)).sum(),
        lambda a, b: ((a * b).exp() + (a * a + 1).sqrt()).mean(),
        lambda a, b: (a.tanh() * b.softplus()).sum(axis=0).sum(),
        lambda a, b: concat([a[:, :1], b, a[:, 1:] ** 3]).sum(),
        lambda a, b: (a.reshape(6).transpose() * b.swapaxes(0, 1).reshape(6)).sum(),
        lambda a, b: (a.sum(axis=1, keepdims=True) * b).mean(),
        lambda a, b: (1.0 - a) .__rtruediv__(3.0).sum() + (2.0 - b).sum(),
    ],
)
def test_elementwise_gradients(fn):
    rng = np.random.default_rng(5)
    check_grad(fn, rng.uniform(0.2, 0.8, size=(2, 3)), rng.uniform(0.2, 0.8, size=(2, 3)))


def test_getitem_repeated_index_accumulates():
    x = leaf([1.0, 2.0, 3.0])
    x[np.array([0, 0, 2])].sum().backward()
    assert np.array_equal(x.grad, [2.0, 0.0, 1.0])


# -- backward ---------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = leaf(np.zeros((2, 3, 4)))
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_square():
    x = leaf([1.0, 2.0])
    (x * x).sum().backward()
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_non_scalar_raises():
    with pytest.raises(ShapeError):
        (leaf([1.0, 2.0]) * 2).backward()


def test_backward_twice_rejected():
    loss = (leaf([1.0]) * 3).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_diamond_graph_visits_once():
    # y used by two consumers; grad must be summed, not duplicated
    x = leaf(2.0)
    y = x * x
    (y + y * 3).backward()
    assert x.grad == pytest.approx(16.0)


def test_deep_chain_no_recursion_limit():
    x = leaf(1.0)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.backward()
    assert x.grad == 1.0


def test_no_grad_records_nothing_and_is_thread_local():
    x = leaf([1.0])
    seen = {}

    def other():
        seen["enabled"] = grad_enabled()

    with no_grad():
        y = x * 2
        th = threading.Thread(target=other)
        th.start()
        th.join()
    assert not y.requires_grad and y._parents == ()
    assert seen["enabled"] is True
    assert grad_enabled()


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(9)
        a, b = leaf(rng.normal(size=(3, 3))), leaf(rng.normal(size=(3, 3)))
        loss = masked_softmax(a @ b).sum(axis=0).tanh().sum()
        loss.backward()
        return loss.data, a.grad, b.grad

    r1, r2 = run(), run()
    assert all(np.array_equal(u, v) for u, v in zip(r1, r2))
