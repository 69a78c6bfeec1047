"""Forward identities, backward rules, and finite-difference checks."""

import numpy as np
import pytest

from smcg import tensor as T
from smcg.tensor import (
    DetachedTensor,
    IndexOutOfRange,
    NonFiniteValue,
    NotScalarLoss,
    ShapeMismatch,
    Tape,
    Tensor,
    grad_check,
)


def test_sigmoid_tanh_at_zero():
    x = Tensor(np.zeros(5))
    assert np.allclose(T.sigmoid(x).data, 0.5)
    assert np.allclose(T.tanh(x).data, 0.0)


def test_softmax_constant_vector_is_uniform():
    for k in (2, 3, 7):
        y = T.softmax(Tensor(np.full(k, 3.25)))
        assert np.allclose(y.data, 1.0 / k)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    y = T.softmax(Tensor(rng.normal(size=(6, 9)) * 10))
    assert np.all(np.abs(y.data.sum(axis=-1) - 1.0) <= 1e-12)


def test_matmul_identity():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(4, 5))
    out = T.matmul(Tensor(np.eye(4)), Tensor(m))
    assert np.array_equal(out.data, m)


def test_matmul_vector_promotions():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(3, 4))
    v = rng.normal(size=4)
    w = rng.normal(size=3)
    assert np.allclose(T.matmul(Tensor(a), Tensor(v)).data, a @ v)
    assert np.allclose(T.matmul(Tensor(w), Tensor(a)).data, w @ a)
    assert np.allclose(T.matmul(Tensor(v), Tensor(v)).data, v @ v)


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6, dtype=float).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(x)
    tape.backward(loss)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_half_norm_gives_x():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=7), requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.mul(x, x)) * 0.5
    tape.backward(loss)
    assert np.allclose(x.grad, x.data)


def test_backward_accumulates_until_zeroed():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(x)
    tape.backward(loss)
    tape.backward(loss)
    assert np.allclose(x.grad, 2.0)
    x.zero_grad()
    tape.backward(loss)
    assert np.allclose(x.grad, 1.0)


def test_not_scalar_loss_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = T.scale(x, 2.0)
    with pytest.raises(NotScalarLoss):
        tape.backward(y)


def test_detached_loss_raises():
    x = Tensor(np.ones(1), requires_grad=True)
    with Tape():
        pass
    with Tape() as other:
        pass
    with Tape() as tape:
        loss = T.reduce_sum(x)
    with pytest.raises(DetachedTensor):
        other.backward(loss)


def test_embedding_index_out_of_range():
    table = Tensor(np.zeros((4, 2)))
    with pytest.raises(IndexOutOfRange):
        T.embedding_lookup(table, [0, 4])


def test_slice_bounds_checked():
    x = Tensor(np.zeros((2, 5)))
    with pytest.raises(IndexOutOfRange):
        T.slice_axis(x, 1, 3, 6)


def test_shape_mismatch_reported():
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeMismatch):
        T.squared_l2(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_debug_finite_check_trips():
    T.set_debug_finite_checks(True)
    try:
        with np.errstate(divide="ignore"), pytest.raises(NonFiniteValue):
            T.div(Tensor(np.ones(2)), Tensor(np.zeros(2)))
    finally:
        T.set_debug_finite_checks(False)


def test_cross_entropy_nonnegative_and_matches_log():
    rng = np.random.default_rng(4)
    logits = Tensor(rng.normal(size=(5, 8)))
    targets = rng.integers(0, 8, size=5)
    ce = T.cross_entropy(logits, targets)
    assert np.all(ce.data >= 0.0)
    probs = T.softmax(logits).data
    direct = -np.log(probs[np.arange(5), targets])
    assert np.allclose(ce.data, direct)


def test_linear_map_gradient_is_exact():
    rng = np.random.default_rng(5)
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="w")
    x = Tensor(rng.normal(size=4), requires_grad=True, name="x")

    def build(w, x):
        return T.reduce_sum(T.matmul(w, x))

    assert grad_check(build, [w, x]) < 1e-9


def test_composite_graph_gradcheck():
    rng = np.random.default_rng(6)
    a = Tensor(rng.normal(size=(4, 6)), requires_grad=True, name="a")
    b = Tensor(rng.normal(size=(6, 3)), requires_grad=True, name="b")
    c = Tensor(rng.normal(size=3), requires_grad=True, name="c")

    def build(a, b, c):
        h = T.tanh(T.matmul(a, b))
        s = T.sigmoid(T.add(h, c))
        p = T.softmax(s)
        picked = T.cross_entropy(p, np.array([0, 1, 2, 0]))
        num = T.sqrt(T.add(T.squared_l2(s, p), T.constant(np.full(4, 0.5))))
        z = T.std_last(s, eps=1e-5)
        return T.reduce_sum(picked) + T.reduce_sum(num) + T.reduce_sum(z) + T.reduce_sum(T.mean_last(h))

    assert grad_check(build, [a, b, c]) < 1e-4


def test_concat_slice_reshape_gradcheck():
    rng = np.random.default_rng(7)
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True, name="a")
    b = Tensor(rng.normal(size=(2, 5)), requires_grad=True, name="b")

    def build(a, b):
        joined = T.concat([a, b], axis=1)
        left = T.slice_axis(joined, 1, 0, 4)
        flat = T.reshape(left, (8,))
        return T.reduce_sum(T.mul(flat, flat))

    assert grad_check(build, [a, b]) < 1e-8


def test_embedding_and_div_gradcheck():
    rng = np.random.default_rng(8)
    table = Tensor(rng.normal(size=(6, 4)), requires_grad=True, name="emb")
    d = Tensor(rng.normal(size=(3, 4)) + 3.0, requires_grad=True, name="d")
    ids = np.array([1, 5, 1])

    def build(table, d):
        rows = T.embedding_lookup(table, ids)
        return T.reduce_sum(T.div(rows, d))

    assert grad_check(build, [table, d]) < 1e-4


def test_forward_determinism_is_bitwise():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 4))

    def run():
        t = Tensor(x.copy())
        return T.softmax(T.tanh(T.matmul(t, t))).data

    first, second = run(), run()
    assert np.array_equal(first, second)


def test_no_tape_means_no_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.scale(x, 2.0)
    assert y._tape is None
    with Tape() as tape:
        T.scale(x, 2.0)
    assert len(tape) == 1
