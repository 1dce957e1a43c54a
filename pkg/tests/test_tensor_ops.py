import numpy as np
import pytest

from mclearn.errors import ModeIndexError, NumericError, ShapeError
from mclearn.tensor_ops import (
    elementwise_mul,
    mode_fold,
    mode_product,
    mode_unfold,
    multi_mode_product,
    subtensor_prefix,
    svd,
    zero_pad_to,
)

RNG = np.random.default_rng(20240901)


def unfold_oracle(t, k):
    """Index-by-index reference for the cyclic unfolding convention."""
    rank = t.ndim
    other = [k + 1 + j for j in range(rank - k - 1)] + list(range(k))
    out = np.zeros((t.shape[k], int(np.prod([t.shape[a] for a in other], dtype=np.int64))))
    for idx in np.ndindex(*t.shape):
        col = 0
        for a in other:
            col = col * t.shape[a] + idx[a]
        out[idx[k], col] = t[idx]
    return out


def test_unfold_matrix_mode0_is_identity():
    t = np.arange(6, dtype=float).reshape(2, 3)
    np.testing.assert_array_equal(mode_unfold(t, 0), t)


def test_unfold_2x2x2_against_loop_oracle():
    t = np.arange(8, dtype=float).reshape(2, 2, 2)
    got = mode_unfold(t, 1)
    assert got.shape == (2, 4)
    np.testing.assert_array_equal(got, unfold_oracle(t, 1))


@pytest.mark.parametrize("k", [0, 1, 2])
def test_unfold_against_loop_oracle_random(k):
    t = RNG.standard_normal((3, 4, 5))
    np.testing.assert_array_equal(mode_unfold(t, k), unfold_oracle(t, k))


def test_unfold_image_shape():
    t = RNG.standard_normal((32, 32, 3))
    assert mode_unfold(t, 2).shape == (3, 1024)


def test_unfold_bad_mode():
    with pytest.raises(ModeIndexError):
        mode_unfold(np.zeros((2, 2)), 2)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_fold_unfold_roundtrip_bitwise(k):
    t = RNG.standard_normal((3, 4, 5))
    back = mode_fold(mode_unfold(t, k), k, t.shape)
    assert np.array_equal(back, t)


def test_fold_column():
    m = np.array([[1.0], [2.0]])
    np.testing.assert_array_equal(mode_fold(m, 0, (2, 1)), m)


def test_fold_shape_mismatch():
    with pytest.raises(ShapeError):
        mode_fold(np.zeros((2, 3)), 0, (2, 2))


def mode_product_oracle(t, a, k):
    """Element-wise definition: out[..., j, ...] = sum_i a[j, i] * t[..., i, ...]."""
    out_shape = list(t.shape)
    out_shape[k] = a.shape[0]
    out = np.zeros(out_shape)
    for idx in np.ndindex(*out.shape):
        acc = 0.0
        for i in range(t.shape[k]):
            src = list(idx)
            src[k] = i
            acc += a[idx[k], i] * t[tuple(src)]
        out[idx] = acc
    return out


def test_mode_product_identity():
    t = RNG.standard_normal((3, 4, 2))
    np.testing.assert_array_equal(mode_product(t, np.eye(4), 1), t)


def test_mode_product_hand_loop():
    t = np.array([[1.0, 2.0], [3.0, 4.0]])
    a = np.array([[1.0, 1.0], [0.0, 1.0]])
    got = mode_product(t, a, 0)
    np.testing.assert_allclose(got, mode_product_oracle(t, a, 0), atol=1e-13)


def test_mode_product_random_loop_oracle():
    t = RNG.standard_normal((3, 2, 4))
    a = RNG.standard_normal((5, 2))
    np.testing.assert_allclose(mode_product(t, a, 1), mode_product_oracle(t, a, 1), atol=1e-12)


def test_mode_product_measurement_shape():
    t = RNG.standard_normal((32, 32, 3))
    a = RNG.standard_normal((15, 32))
    assert mode_product(t, a, 0).shape == (15, 32, 3)


def test_mode_product_dim_mismatch():
    with pytest.raises(ShapeError):
        mode_product(np.zeros((3, 3)), np.zeros((2, 4)), 0)


def test_mode_product_matricization_law():
    for shape in [(3,), (4, 3), (2, 3, 4), (2, 3, 2, 3)]:
        t = RNG.standard_normal(shape)
        for k in range(len(shape)):
            a = RNG.standard_normal((shape[k] + 1, shape[k]))
            lhs = mode_unfold(mode_product(t, a, k), k)
            rhs = a @ mode_unfold(t, k)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_multi_mode_empty():
    t = RNG.standard_normal((3, 3))
    np.testing.assert_array_equal(multi_mode_product(t, []), t)


def test_multi_mode_commutes_across_distinct_modes():
    t = RNG.standard_normal((3, 4))
    a = RNG.standard_normal((2, 3))
    b = RNG.standard_normal((5, 4))
    lhs = multi_mode_product(t, [(a, 0), (b, 1)])
    rhs = multi_mode_product(t, [(b, 1), (a, 0)])
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_multi_mode_paper_configuration_shape():
    y = RNG.standard_normal((32, 32, 3))
    mats = [(RNG.standard_normal((15, 32)), 0), (RNG.standard_normal((15, 32)), 1), (RNG.standard_normal((2, 3)), 2)]
    assert multi_mode_product(y, mats).shape == (15, 15, 2)


def test_multi_mode_duplicate_mode():
    with pytest.raises(ValueError):
        multi_mode_product(np.zeros((2, 2)), [(np.eye(2), 0), (np.eye(2), 0)])


def test_subtensor_prefix_full_size():
    t = RNG.standard_normal((4, 6, 2))
    np.testing.assert_array_equal(subtensor_prefix(t, (4, 6, 2)), t)


def test_subtensor_prefix_small_case():
    t = np.arange(9, dtype=float).reshape(3, 3)
    np.testing.assert_array_equal(subtensor_prefix(t, (2, 2)), [[0.0, 1.0], [3.0, 4.0]])


def test_subtensor_prefix_elements_match():
    z = RNG.standard_normal((15, 15, 2))
    zbar = subtensor_prefix(z, (4, 6, 2))
    assert zbar.shape == (4, 6, 2)
    for idx in np.ndindex(4, 6, 2):
        assert zbar[idx] == z[idx]


def test_subtensor_prefix_out_of_range():
    t = np.zeros((3, 3))
    with pytest.raises(ShapeError):
        subtensor_prefix(t, (4, 2))
    with pytest.raises(ShapeError):
        subtensor_prefix(t, (0, 2))


def test_zero_pad_identity():
    t = RNG.standard_normal((3, 2))
    np.testing.assert_array_equal(zero_pad_to(t, (3, 2)), t)


def test_zero_pad_ones_block():
    out = zero_pad_to(np.ones((2, 2)), (3, 3))
    np.testing.assert_array_equal(out, [[1, 1, 0], [1, 1, 0], [0, 0, 0]])


def test_zero_pad_prefix_roundtrip():
    t = RNG.standard_normal((4, 6, 2))
    padded = zero_pad_to(t, (15, 15, 2))
    np.testing.assert_array_equal(subtensor_prefix(padded, (4, 6, 2)), t)


def test_zero_pad_target_too_small():
    with pytest.raises(ShapeError):
        zero_pad_to(np.zeros((3, 3)), (2, 3))


def test_elementwise_mul_ones_zeros():
    t = RNG.standard_normal((3, 4))
    np.testing.assert_array_equal(elementwise_mul(t, np.ones((3, 4))), t)
    np.testing.assert_array_equal(elementwise_mul(t, np.zeros((3, 4))), np.zeros((3, 4)))


def test_elementwise_mul_matches_prefix_pad():
    # The identity connecting mask training to prefix deployment.
    t = RNG.standard_normal((5, 4, 3))
    for dims in [(1, 1, 1), (3, 2, 1), (5, 4, 3), (2, 4, 2)]:
        mask = np.zeros(t.shape)
        mask[tuple(slice(0, m) for m in dims)] = 1.0
        lhs = elementwise_mul(t, mask)
        rhs = zero_pad_to(subtensor_prefix(t, dims), t.shape)
        np.testing.assert_array_equal(lhs, rhs)


def test_elementwise_mul_shape_mismatch():
    with pytest.raises(ShapeError):
        elementwise_mul(np.zeros((2, 2)), np.zeros((2, 3)))


def test_svd_identity():
    res = svd(np.eye(3))
    np.testing.assert_allclose(res.s, [1.0, 1.0, 1.0], atol=1e-14)


def test_svd_diagonal():
    res = svd(np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(res.s, [3.0, 2.0, 1.0], atol=1e-14)
    # sign convention: dominant entries positive
    assert all(res.u[np.argmax(np.abs(res.u[:, j])), j] > 0 for j in range(3))


def test_svd_reconstruction_and_orthonormality():
    m = RNG.standard_normal((8, 20))
    res = svd(m)
    rec = res.u @ np.diag(res.s) @ res.vt
    assert np.linalg.norm(rec - m) / np.linalg.norm(m) < 1e-10
    np.testing.assert_allclose(res.u.T @ res.u, np.eye(8), atol=1e-10)
    assert np.all(np.diff(res.s) <= 1e-12)


def test_svd_sign_flips_are_consistent():
    m = RNG.standard_normal((6, 6))
    a = svd(m)
    b = svd(m.copy())
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.vt, b.vt)


def test_svd_rejects_non_finite():
    m = np.zeros((2, 2))
    m[0, 0] = np.nan
    with pytest.raises(NumericError):
        svd(m)


def test_norm_contraction_under_orthonormal_rows():
    t = RNG.standard_normal((6, 5, 4))
    for k in range(3):
        q, _ = np.linalg.qr(RNG.standard_normal((t.shape[k], 3)))
        a = q.T  # orthonormal rows
        out = mode_product(t, a, k)
        assert np.linalg.norm(out) <= np.linalg.norm(t) + 1e-10
