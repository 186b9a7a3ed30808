import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import dense_softmax
from tgtn.numerics import (BCE_EPS, ParamStore, ShapeError, adam_step, finite_diff_gradient,
                           layer_norm, layer_norm_backward, layer_norm_forward, masked_softmax_rows,
                           matmul, segment_softmax, weighted_bce, weighted_bce_grad)

finite = st.floats(-50, 50, allow_nan=False)


def test_matmul_examples():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(A, np.eye(2)), A)
    assert np.array_equal(matmul(A, [[1.0], [1.0]]), [[3.0], [7.0]])
    assert not matmul(np.zeros((2, 3)), np.ones((3, 4))).any()


def test_matmul_shape_error_names_both():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_matmul_bit_deterministic():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(30, 20)), rng.normal(size=(20, 10))
    assert matmul(A, B).tobytes() == matmul(A, B).tobytes()


def test_softmax_examples():
    assert np.allclose(masked_softmax_rows([[2.0, 2.0, 2.0]], [[True, True, False]]), [[0.5, 0.5, 0.0]])
    assert np.array_equal(masked_softmax_rows([[0.0, 0.0]], [[True, False]]), [[1.0, 0.0]])
    out = masked_softmax_rows([[math.log(1), math.log(3)]], [[True, True]])
    assert np.allclose(out, [[0.25, 0.75]], atol=1e-15)


def test_softmax_fully_masked_row():
    with pytest.raises(ValueError):
        masked_softmax_rows([[1.0, 2.0]], [[False, False]])


@st.composite
def scored_masks(draw):
    r, c = draw(st.integers(1, 6)), draw(st.integers(1, 6))
    s = draw(arrays(np.float64, (r, c), elements=finite))
    m = draw(arrays(np.bool_, (r, c)))
    m[np.arange(r), draw(arrays(np.int64, r, elements=st.integers(0, c - 1)))] = True
    return s, m


@given(scored_masks(), finite)
def test_softmax_properties(sm, shift):
    s, m = sm
    p = masked_softmax_rows(s, m)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    assert (p >= 0).all() and (p <= 1).all() and (p[~m] == 0).all()
    assert np.allclose(masked_softmax_rows(s + shift, m), p, atol=1e-12, rtol=0)
    assert np.allclose(p, dense_softmax(s, m), atol=1e-12, rtol=0)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=6), st.integers(0, 1000))
def test_segment_softmax_matches_dense(counts, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=sum(counts)) * 10
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    out = segment_softmax(s, starts)
    for a, c in zip(starts, counts):
        ref = np.exp(s[a:a + c] - s[a:a + c].max())
        assert np.allclose(out[a:a + c], ref / ref.sum(), atol=1e-14)


def test_layer_norm_examples():
    assert np.allclose(layer_norm([3.0, 3.0, 3.0], [2, 2, 2], [0.5, -1, 7]), [0.5, -1, 7])
    assert np.allclose(layer_norm([-1.0, 1.0], [1, 1], [0, 0], eps=1e-12), [-1, 1])
    with pytest.raises(ShapeError):
        layer_norm([1.0, 2.0], [1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        layer_norm([1.0, 2.0], [1, 1], [0, 0], eps=0)


@given(arrays(np.float64, st.integers(2, 12), elements=finite), finite)
def test_layer_norm_shift_invariant(x, c):
    n = len(x)
    a = layer_norm(x, np.ones(n), np.zeros(n))
    b = layer_norm(x + c, np.ones(n), np.zeros(n))
    assert np.allclose(a, b, atol=1e-10, rtol=0)
    if x.std() > 1e-3:
        assert abs(a.mean()) < 1e-10 and abs(a.var() - 1) < 1e-3


def test_layer_norm_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    x, gamma, beta, dy = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5), rng.normal(size=(3, 5))
    _, cache = layer_norm_forward(x, gamma, beta)
    dx, dgamma, dbeta = layer_norm_backward(dy, gamma, cache)
    store = ParamStore()
    store.add("x", x)
    store.add("gamma", gamma)
    store.add("beta", beta)
    fd = finite_diff_gradient(lambda s: float((layer_norm_forward(s["x"], s["gamma"], s["beta"])[0] * dy).sum()), store)
    assert np.allclose(dx, fd["x"], atol=1e-8)
    assert np.allclose(dgamma, fd["gamma"], atol=1e-8)
    assert np.allclose(dbeta, fd["beta"], atol=1e-8)


def test_bce_examples():
    assert weighted_bce([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2), abs=1e-15)
    assert weighted_bce([0.5], [1], pos_weight=2) == pytest.approx(2 * math.log(2), abs=1e-15)
    assert weighted_bce([1.0, 0.0], [1, 0]) <= -math.log1p(-BCE_EPS) * (1 + 1e-12)
    with pytest.raises(ShapeError):
        weighted_bce([0.5], [1, 0])


def test_bce_grad():
    p, y = np.array([0.3, 0.8, 1.0]), np.array([1.0, 0.0, 1.0])
    g = weighted_bce_grad(p, y, 2.0)
    h = 1e-7
    for i in range(2):
        d = np.zeros(3)
        d[i] = h
        assert g[i] == pytest.approx((weighted_bce(p + d, y, 2.0) - weighted_bce(p - d, y, 2.0)) / (2 * h), rel=1e-6)
    assert g[2] == 0.0  # clamp active


def test_param_store_slots():
    s = ParamStore()
    s.add("w", np.ones((2, 3)))
    assert s.grads["w"].shape == s.m["w"].shape == s.v["w"].shape == (2, 3)
    with pytest.raises(KeyError):
        s.add("w", np.ones(1))
    with pytest.raises(ShapeError):
        s.set_grads({"w": np.ones(3)})
    assert s.size() == 6


def test_adam_zero_grad_fixed_point():
    s = ParamStore()
    s.add("w", [1.0, -2.0])
    adam_step(s, lr=0.1, t=1)
    assert np.array_equal(s["w"], [1.0, -2.0])


def test_adam_first_step_magnitude_and_zeroing():
    s = ParamStore()
    s.add("w", [0.0])
    s.set_grads({"w": np.array([1.0])})
    adam_step(s, lr=0.01, t=1)
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert s["w"][0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)
    assert s.grads["w"][0] == 0.0


def test_adam_symmetry():
    s = ParamStore()
    s.add("a", [0.5])
    s.add("b", [0.5])
    for t in range(1, 6):
        s.set_grads({"a": np.array([0.3 * t]), "b": np.array([0.3 * t])})
        adam_step(s, t=t)
    assert s["a"][0] == s["b"][0]
    with pytest.raises(ValueError):
        adam_step(s, t=0)


def test_finite_diff_examples():
    s = ParamStore()
    s.add("t", [3.0])
    assert finite_diff_gradient(lambda p: float(p["t"][0] ** 2), s)["t"][0] == pytest.approx(6.0, abs=1e-8)
    assert not finite_diff_gradient(lambda p: 1.0, s)["t"].any()
    s.add("v", [1.0, -2.0, 0.5, 4.0])
    g = finite_diff_gradient(lambda p: float((p["v"] ** 2).sum()), s, names=["v"])
    assert np.allclose(g["v"], 2 * s["v"], atol=1e-6)
