import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isdarts import functional as F
from isdarts.errors import DimensionError, UsageError
from isdarts.tensor import Tensor, backward, precision

from fdcheck import fd_grad, rel_err


def naive_conv(x, w, stride, pad, dil, groups):
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - dil * (k - 1) - 1) // stride + 1
    wo = (wd + 2 * pad - dil * (k - 1) - 1) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    per = cout // groups
    for b in range(n):
        for o in range(cout):
            g = o // per
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cg):
                        for u in range(k):
                            for v in range(k):
                                acc += w[o, c, u, v] * xp[b, g * cg + c, i * stride + u * dil, j * stride + v * dil]
                    out[b, o, i, j] = acc
    return out


@pytest.mark.parametrize("stride,pad,dil,groups", [(1, 1, 1, 1), (2, 1, 1, 1), (1, 2, 2, 3), (1, 0, 1, 3), (2, 2, 2, 1)])
def test_conv2d_matches_loop_oracle(stride, pad, dil, groups):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((6, 3 // groups, 3, 3))
    with precision("float64"):
        got = F.conv2d(Tensor(x), Tensor(w), stride, pad, dil, groups).data
    assert np.allclose(got, naive_conv(x, w, stride, pad, dil, groups), atol=1e-12)


@pytest.mark.parametrize("stride,pad,dil,groups", [(1, 1, 1, 1), (2, 1, 1, 3), (1, 2, 2, 3)])
def test_conv2d_gradient(stride, pad, dil, groups):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((3, 3 // groups, 3, 3))
    r = rng.standard_normal(F.conv2d(Tensor(x), Tensor(w), stride, pad, dil, groups).shape)
    with precision("float64"):
        num = fd_grad(lambda: float((F.conv2d(Tensor(x), Tensor(w), stride, pad, dil, groups).data * r).sum()), [x, w])
        tx, tw = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        backward(F.sum(F.conv2d(tx, tw, stride, pad, dil, groups) * Tensor(r)), [tx, tw])
    assert rel_err([tx.grad, tw.grad], num) < 1e-8


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(DimensionError):
        F.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))


def naive_pool(x, stride, reducer, exclude_pad):
    n, c, h, w = x.shape
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    vals = [x[b, ch, i * stride + u - 1, j * stride + v - 1]
                            for u in range(3) for v in range(3)
                            if 0 <= i * stride + u - 1 < h and 0 <= j * stride + v - 1 < w]
                    out[b, ch, i, j] = reducer(vals)
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_pools_match_loop_oracle(stride):
    x = np.random.default_rng(3).standard_normal((2, 2, 5, 5))
    with precision("float64"):
        avg = F.avg_pool2d(Tensor(x), 3, stride, 1).data
        mx = F.max_pool2d(Tensor(x), 3, stride, 1).data
    assert np.allclose(avg, naive_pool(x, stride, np.mean, True), atol=1e-12)
    assert np.array_equal(mx, naive_pool(x, stride, max, True))


def test_max_pool_tie_gradient_goes_to_first_position():
    x = Tensor(np.ones((1, 1, 1, 2)), requires_grad=True)
    backward(F.sum(F.max_pool2d(x, 3, 2, 1)), [x])
    assert x.grad.tolist() == [[[[1.0, 0.0]]]]


def test_batch_norm_training_statistics_and_running_update():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4, 2, 3, 3)) * 3 + 1
    rm, rv = np.zeros(2), np.ones(2)
    with precision("float64"):
        y = F.batch_norm(Tensor(x), rm, rv, training=True).data
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1 / (1 + 1e-5 / x.var(axis=(0, 2, 3))), atol=1e-9)
    m = 4 * 9
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))


def test_batch_norm_eval_uses_running_statistics():
    x = np.full((1, 1, 2, 2), 5.0)
    with precision("float64"):
        y = F.batch_norm(Tensor(x), np.array([1.0]), np.array([4.0]), training=False).data
    assert np.allclose(y, 4.0 / math.sqrt(4.0 + 1e-5))


def test_cross_entropy_uniform_logits_is_log_k():
    loss = F.softmax_cross_entropy(Tensor(np.zeros((3, 5))), [0, 1, 4])
    assert loss.item() == pytest.approx(math.log(5), abs=1e-6)


def test_cross_entropy_saturated_logit_is_zero():
    logits = np.zeros((1, 4))
    logits[0, 2] = 1000.0
    assert F.softmax_cross_entropy(Tensor(logits), [2]).item() == pytest.approx(0.0, abs=1e-6)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((6, 4))
    y = rng.integers(0, 4, 6)
    with precision("float64"):
        num = fd_grad(lambda: F.softmax_cross_entropy(Tensor(z), y).item(), [z])
        t = Tensor(z, requires_grad=True)
        backward(F.softmax_cross_entropy(t, y), [t])
    assert rel_err([t.grad], num) < 1e-6


def test_cross_entropy_label_out_of_range():
    with pytest.raises(UsageError):
        F.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_is_a_probability_vector(values):
    p = F.softmax(Tensor(np.array(values, dtype=np.float64))).data
    assert (p >= 0).all() and abs(p.sum() - 1) < 1e-6


def test_add_n_is_left_to_right_and_checks_shapes():
    a, b = Tensor(np.ones(2)), Tensor(np.ones(3))
    with pytest.raises(DimensionError):
        F.add_n([a, b])
    with pytest.raises(UsageError):
        F.add_n([])


def test_broadcast_add_gradient_sums_over_broadcast_axes():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    backward(F.sum(a + b), [a, b])
    assert b.grad.tolist() == [2.0, 2.0, 2.0]
