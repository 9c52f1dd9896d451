"""Reverse-mode engine vs the central finite-difference oracle."""

import numpy as np
import pytest

from ldem import autodiff as ad
from fdcheck import assert_gradients_match, fd_gradients, relative_error


def _weights(rng, shape):
    # Fixed random projection so every output entry influences the loss.
    return rng.normal(size=shape)


def _check(build, arrays, seed=0):
    """build(list_of_Vars) -> scalar Var; arrays are the leaf values."""
    params = [ad.Var(a) for a in arrays]
    loss = build(params)
    g_ad = ad.gradients(loss, params)

    def f(raw):
        return float(build([ad.Var(a) for a in raw]).value)

    assert_gradients_match(f, arrays, g_ad)


def test_add_sub_mul_div_broadcasting():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3,))
    c = rng.uniform(1.0, 2.0, size=(4, 1))
    w = _weights(rng, (4, 3))

    def build(p):
        x, y, z = p
        expr = (x + y) * z - x / z + 2.0 * y
        return ad.total(expr * w)

    _check(build, [a, b, c])


@pytest.mark.parametrize("fn,lo,hi", [
    (ad.absolute, 0.2, 1.5),
    (ad.square, -2.0, 2.0),
    (ad.sqrt, 0.5, 3.0),
    (ad.exp, -1.0, 1.0),
    (ad.log, 0.5, 3.0),
    (ad.sigmoid, -3.0, 3.0),
    (ad.relu, 0.2, 2.0),
])
def test_elementwise_functions(fn, lo, hi):
    rng = np.random.default_rng(2)
    x = rng.uniform(lo, hi, size=(17,))
    w = _weights(rng, (17,))
    _check(lambda p: ad.total(fn(p[0]) * w), [x])


def test_relu_negative_branch_and_abs_sign():
    rng = np.random.default_rng(3)
    x = rng.uniform(-2.0, -0.2, size=(9,))
    _check(lambda p: ad.total(ad.relu(p[0])), [x])
    _check(lambda p: ad.total(ad.absolute(p[0])), [x])


def test_abs_subgradient_zero_at_kink():
    x = ad.Var(np.zeros(3))
    loss = ad.total(ad.absolute(x))
    loss.backward()
    assert np.all(x.grad == 0.0)


def test_matvec():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(5, 7))
    x = rng.normal(size=(7,))
    pw = _weights(rng, (5,))
    _check(lambda p: ad.total(ad.matvec(p[0], p[1]) * pw), [w, x])


@pytest.mark.parametrize("n,k", [(1, 1), (6, 1), (6, 3), (6, 5), (5, 2), (4, 4)])
def test_conv1d_shapes_and_gradients(n, k):
    rng = np.random.default_rng(10 + n * 7 + k)
    x = rng.normal(size=(n,))
    kern = rng.normal(size=(k,))
    w = _weights(rng, (n,))

    def build(p):
        y = ad.conv1d(p[0], p[1])
        assert y.shape == (n,)
        return ad.total(y * w)

    _check(build, [x, kern])


def test_conv1d_identity_kernel():
    x = ad.Var([1.0, -2.0, 3.0])
    y = ad.conv1d(x, ad.Var([1.0]))
    assert np.array_equal(y.value, x.value)


def test_reductions():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(13,))
    _check(lambda p: ad.total(p[0]) * 0.5, [x])
    _check(lambda p: ad.mean(p[0]) * 3.0, [x])
    _check(lambda p: ad.std(p[0]), [x])
    _check(lambda p: ad.std(p[0], ddof=1), [x])
    _check(lambda p: ad.std(p[0]) / ad.mean(p[0]), [x])


def test_std_of_uniform_input_has_zero_gradient():
    x = ad.Var(np.full(6, 2.5))
    loss = ad.std(x)
    loss.backward()
    assert loss.value == 0.0
    assert np.all(x.grad == 0.0)


def test_getitem_gather_with_duplicates():
    x = ad.Var([1.0, 2.0, 3.0])
    y = x[np.array([0, 0, 2])]
    loss = ad.total(y)
    loss.backward()
    assert np.array_equal(x.grad, [2.0, 0.0, 1.0])


def test_getitem_slices_and_reshape():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(12,))
    w = _weights(rng, (2, 3))

    def build(p):
        m = p[0].reshape(3, 4)
        sub = m[1:, :3]
        return ad.total(sub * w)

    _check(build, [x])


def test_diamond_graph_accumulates_both_paths():
    x = ad.Var([3.0])
    y = ad.Var([4.0])
    z = ad.total(x * y + x)
    z.backward()
    assert x.grad[0] == pytest.approx(5.0)
    assert y.grad[0] == pytest.approx(3.0)


def test_sigmoid_chain_slope_at_origin():
    x = ad.Var([0.0])
    loss = ad.total(ad.sigmoid(x * 2.0))
    loss.backward()
    assert x.grad[0] == pytest.approx(0.5, abs=1e-12)


def test_unused_parameter_gets_zero_gradient():
    x = ad.Var([1.0, 2.0])
    unused = ad.Var([5.0])
    g = ad.gradients(ad.total(ad.square(x)), [x, unused])
    assert np.array_equal(g[1], [0.0])


def test_random_composite_graphs_match_fd():
    # Property sweep: small random expressions over the primitive set.
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        a = rng.uniform(0.5, 2.0, size=(6,))
        b = rng.uniform(0.5, 2.0, size=(6,))
        w = rng.normal(size=(3, 6))

        def build(p):
            x, y = p
            t = ad.sigmoid(x * y - 1.0) + ad.sqrt(x) / y
            u = ad.matvec(ad.Var(w), t - ad.mean(t))
            return ad.total(ad.square(u)) + ad.std(y) / ad.mean(x)

        _check(build, [a, b], seed=seed)


def test_values_are_float64():
    x = ad.Var([1, 2, 3])
    assert x.value.dtype == np.float64


def test_clip_gradients_three_four_five():
    clipped = ad.clip_gradients([np.array([3.0]), np.array([4.0])], threshold=1.0)
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in clipped))
    assert norm == pytest.approx(1.0, abs=1e-12)


def test_clip_gradients_below_threshold_untouched():
    g = [np.array([0.3, 0.4])]
    out = ad.clip_gradients(g, threshold=1.0)
    assert np.array_equal(out[0], g[0])


def test_adam_first_step_is_signed_lr():
    lr = 1e-2
    p = np.array([1.0, 1.0, 1.0])
    g = np.array([3.0, -4.0, 5.0])
    opt = ad.Adam([p], lr=lr)
    opt.step([p], [g])
    assert np.allclose(p, 1.0 - lr * np.sign(g), atol=1e-8)


def test_adam_matches_reference_loop_on_quadratic():
    # Oracle: the textbook update sequence written out longhand.
    lr, b1, b2, eps = 3e-2, 0.9, 0.999, 1e-8
    target = np.array([0.3, -1.2, 0.7])

    p = np.zeros(3)
    opt = ad.Adam([p], lr=lr)
    p_ref = np.zeros(3)
    m = np.zeros(3)
    v = np.zeros(3)
    for t in range(1, 51):
        g = 2.0 * (p - target)
        opt.step([p], [g])

        g_ref = 2.0 * (p_ref - target)
        m = b1 * m + (1 - b1) * g_ref
        v = b2 * v + (1 - b2) * g_ref ** 2
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p_ref = p_ref - lr * mhat / (np.sqrt(vhat) + eps)
        assert np.allclose(p, p_ref, atol=1e-12)
    assert np.linalg.norm(p - target) < np.linalg.norm(target)


def test_fd_oracle_self_consistency():
    # The oracle itself: quadratic with known gradient.
    x = np.array([1.0, -2.0, 0.5])
    g = fd_gradients(lambda arrs: float(np.sum(arrs[0] ** 2)), [x])
    assert relative_error(g, [2.0 * x]) < 1e-8
