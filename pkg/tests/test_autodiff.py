import numpy as np
import pytest

from mclearn import autodiff as ad


def numeric_grad(fn, x, h=1e-6):
    """Central finite differences of a scalar fn over every element of x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn()
        flat[i] = orig - h
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return g


def check_grads(build, arrays, atol=1e-7, rtol=1e-5):
    """build(vars) -> scalar Var; compares backward against finite diffs."""
    var_list = [ad.Var(a) for a in arrays]
    out = build(var_list)
    ad.backward(out)
    for v, a in zip(var_list, arrays):
        fd = numeric_grad(lambda: float(build([ad.Var(x) for x in arrays]).value), a)
        got = v.grad if v.grad is not None else np.zeros_like(a)
        np.testing.assert_allclose(got, fd, atol=atol, rtol=rtol)


def test_add_mul_matmul():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))

    def build(vs):
        x, y = vs
        prod = ad.matmul(x, y)
        return ad.Var(np.asarray(prod.value.sum()), (prod,), lambda g: (np.ones_like(prod.value) * g,))

    check_grads(build, [a, b])


def test_relu_grad():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 5)) + 0.1  # keep away from the kink

    def build(vs):
        r = ad.relu(vs[0])
        return ad.Var(np.asarray((r.value**2).sum() / 2), (r,), lambda g: (r.value * g,))

    check_grads(build, [x])


def test_batch_mode_product_grads():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 4, 2))  # batch of (3,4,2) tensors
    for mode, rows in [(0, 5), (1, 2), (2, 3)]:
        m = rng.standard_normal((rows, x.shape[mode + 1]))

        def build(vs):
            out = ad.batch_mode_product(vs[0], vs[1], mode)
            w = np.cos(np.arange(out.value.size)).reshape(out.value.shape)
            return ad.Var(np.asarray((out.value * w).sum()), (out,), lambda g: (w * g,))

        check_grads(build, [x, m])


def test_batch_mode_product_matches_elementwise_definition():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 4))
    m = rng.standard_normal((5, 3))
    out = ad.batch_mode_product(ad.Var(x), ad.Var(m), 0).value
    expected = np.einsum("bik,ji->bjk", x, m)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_prefix_pad_batch_values_and_grads():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 4, 5, 2))
    out = ad.prefix_pad_batch(ad.Var(x), (2, 3, 1))
    assert out.value.shape == x.shape
    np.testing.assert_array_equal(out.value[:, :2, :3, :1], x[:, :2, :3, :1])
    assert np.all(out.value[:, 2:, :, :] == 0)

    def build(vs):
        p = ad.prefix_pad_batch(vs[0], (2, 3, 1))
        w = np.sin(np.arange(p.value.size)).reshape(p.value.shape)
        return ad.Var(np.asarray((p.value * w).sum()), (p,), lambda g: (w * g,))

    check_grads(build, [x])


def test_conv2d_grads_all_inputs():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 5, 5, 2))
    w = rng.standard_normal((3, 3, 2, 3)) * 0.5
    b = rng.standard_normal(3)

    for stride, padding in [(1, 0), (1, 1), (2, 1)]:

        def build(vs):
            out = ad.conv2d(vs[0], vs[1], vs[2], stride=stride, padding=padding)
            wgt = np.cos(np.arange(out.value.size)).reshape(out.value.shape)
            return ad.Var(np.asarray((out.value * wgt).sum()), (out,), lambda g: (wgt * g,))

        check_grads(build, [x, w, b])


def test_conv2d_matches_direct_convolution():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 4, 4, 1))
    w = rng.standard_normal((3, 3, 1, 1))
    b = np.zeros(1)
    out = ad.conv2d(ad.Var(x), ad.Var(w), ad.Var(b), stride=1, padding=0).value
    expected = np.zeros((1, 2, 2, 1))
    for i in range(2):
        for j in range(2):
            expected[0, i, j, 0] = np.sum(x[0, i:i + 3, j:j + 3, 0] * w[:, :, 0, 0])
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_global_avg_pool_and_dense():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 4, 4, 2))
    w = rng.standard_normal((2, 3))
    b = rng.standard_normal(3)

    def build(vs):
        pooled = ad.global_avg_pool(vs[0])
        out = ad.dense(pooled, vs[1], vs[2])
        wgt = np.sin(np.arange(out.value.size)).reshape(out.value.shape)
        return ad.Var(np.asarray((out.value * wgt).sum()), (out,), lambda g: (wgt * g,))

    check_grads(build, [x, w, b])


def test_softmax_cross_entropy_matches_definition():
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 2])
    loss, probs = ad.softmax_cross_entropy(ad.Var(logits), labels)
    expected_probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs, expected_probs, atol=1e-12)
    np.testing.assert_allclose(probs.sum(axis=1), np.ones(4), atol=1e-12)
    expected_loss = -np.log(expected_probs[np.arange(4), labels]).mean()
    assert float(loss.value) == pytest.approx(expected_loss, abs=1e-12)


def test_softmax_cross_entropy_grad():
    rng = np.random.default_rng(9)
    logits = rng.standard_normal((4, 3))
    labels = np.array([1, 0, 2, 1])

    var = ad.Var(logits)
    loss, _ = ad.softmax_cross_entropy(var, labels)
    ad.backward(loss)
    fd = numeric_grad(
        lambda: float(ad.softmax_cross_entropy(ad.Var(logits), labels)[0].value), logits)
    np.testing.assert_allclose(var.grad, fd, atol=1e-8)


def test_grad_accumulates_over_shared_inputs():
    x = ad.Var(np.array([2.0]))
    y = ad.add(x, x)
    ad.backward(y)
    np.testing.assert_array_equal(x.grad, [2.0])


def test_mul_const_masks_gradient():
    x = ad.Var(np.array([1.0, -2.0, 3.0]))
    out = ad.mul_const(x, np.array([1.0, 0.0, 1.0]))
    ad.backward(out, seed=np.ones(3))
    np.testing.assert_array_equal(x.grad, [1.0, 0.0, 1.0])
