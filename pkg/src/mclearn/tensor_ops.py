"""Dense multiway-array primitives: unfold/fold, mode products, prefix
sub-tensors, zero padding, and a sign-fixed SVD.

Tensors are C-contiguous float64 ndarrays. The mode-k unfolding orders the
column multi-index cyclically as (k+1, ..., K, 1, ..., k-1) with the last
listed mode varying fastest; ``mode_fold`` is its exact inverse, so any code
that pairs the two is convention-safe.
"""

from typing import NamedTuple

import numpy as np

from .errors import ModeIndexError, NumericError, ShapeError


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def as_tensor(x):
    """Coerce to a C-contiguous float64 ndarray of rank >= 1."""
    t = np.ascontiguousarray(x, dtype=np.float64)
    if t.ndim < 1:
        t = t.reshape(1)
    if any(e < 1 for e in t.shape):
        raise ShapeError(f"every extent must be >= 1, got shape {t.shape}")
    return t


def _check_mode(t, k):
    if not 0 <= k < t.ndim:
        raise ModeIndexError(f"mode {k} out of range for rank-{t.ndim} tensor")


def _cyclic_axes(rank, k):
    return [k] + list(range(k + 1, rank)) + list(range(k))


def mode_unfold(t, k):
    """Mode-k matricization: rows index mode k, columns the other modes in
    cyclic order."""
    t = as_tensor(t)
    _check_mode(t, k)
    return np.transpose(t, _cyclic_axes(t.ndim, k)).reshape(t.shape[k], -1)


def mode_fold(m, k, target_shape):
    """Exact inverse of :func:`mode_unfold` for the given target shape."""
    m = np.ascontiguousarray(m, dtype=np.float64)
    target_shape = tuple(int(e) for e in target_shape)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got rank {m.ndim}")
    if not 0 <= k < len(target_shape):
        raise ModeIndexError(f"mode {k} out of range for shape {target_shape}")
    other = int(np.prod([e for j, e in enumerate(target_shape) if j != k], dtype=np.int64))
    if m.shape != (target_shape[k], other):
        raise ShapeError(f"matrix {m.shape} does not fold into {target_shape} at mode {k}")
    axes = _cyclic_axes(len(target_shape), k)
    permuted_shape = tuple(target_shape[a] for a in axes)
    inverse = np.argsort(axes)
    return np.ascontiguousarray(np.transpose(m.reshape(permuted_shape), inverse))


def mode_product(t, a, k):
    """Multiply tensor t along mode k by matrix a (a.cols must equal the
    mode-k extent); the mode-k extent becomes a.rows."""
    t = as_tensor(t)
    a = np.ascontiguousarray(a, dtype=np.float64)
    _check_mode(t, k)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got rank {a.ndim}")
    if a.shape[1] != t.shape[k]:
        raise ShapeError(
            f"matrix with {a.shape[1]} columns cannot contract mode {k} of extent {t.shape[k]}"
        )
    out = np.tensordot(t, a, axes=([k], [1]))
    return np.ascontiguousarray(np.moveaxis(out, -1, k))


def multi_mode_product(t, mats):
    """Apply (matrix, mode) pairs sequentially; modes must be distinct, so
    the result is order-independent up to roundoff."""
    t = as_tensor(t)
    modes = [k for _, k in mats]
    if len(set(modes)) != len(modes):
        raise ValueError(f"duplicate modes in multi-mode product: {modes}")
    for a, k in mats:
        t = mode_product(t, a, k)
    return t


def subtensor_prefix(t, dims):
    """The corner block t[0:m_1, ..., 0:m_K]."""
    t = as_tensor(t)
    dims = tuple(int(m) for m in dims)
    if len(dims) != t.ndim:
        raise ShapeError(f"dims rank {len(dims)} != tensor rank {t.ndim}")
    for k, (m, e) in enumerate(zip(dims, t.shape)):
        if not 1 <= m <= e:
            raise ShapeError(f"prefix extent {m} out of range [1, {e}] at mode {k}")
    return t[tuple(slice(0, m) for m in dims)].copy()


def zero_pad_to(t, target_shape):
    """Embed t in the corner of a zero tensor of target_shape."""
    t = as_tensor(t)
    target_shape = tuple(int(e) for e in target_shape)
    if len(target_shape) != t.ndim:
        raise ShapeError(f"target rank {len(target_shape)} != tensor rank {t.ndim}")
    for k, (e, te) in enumerate(zip(t.shape, target_shape)):
        if e > te:
            raise ShapeError(f"target extent {te} smaller than tensor extent {e} at mode {k}")
    out = np.zeros(target_shape)
    out[tuple(slice(0, e) for e in t.shape)] = t
    return out


def elementwise_mul(t, b):
    """Hadamard product of equal-shape tensors."""
    t = as_tensor(t)
    b = as_tensor(b)
    if t.shape != b.shape:
        raise ShapeError(f"shape mismatch {t.shape} vs {b.shape}")
    return t * b


def svd(m):
    """Thin SVD with a deterministic sign convention: each left singular
    vector is flipped so its largest-magnitude entry (lowest index on ties)
    is positive."""
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got rank {m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NumericError("svd input contains non-finite values")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u, vt = fix_signs(u, vt)
    return SvdResult(u, s, vt)


def fix_signs(u, vt=None):
    """Flip column signs of u (and matching rows of vt) so the entry of
    largest magnitude in each column is positive; ties go to the lowest
    index."""
    u = np.array(u, dtype=np.float64, copy=True)
    if vt is not None:
        vt = np.array(vt, dtype=np.float64, copy=True)
    for j in range(u.shape[1]):
        pivot = int(np.argmax(np.abs(u[:, j])))
        if u[pivot, j] < 0:
            u[:, j] = -u[:, j]
            if vt is not None and j < vt.shape[0]:
                vt[j, :] = -vt[j, :]
    if vt is None:
        return u
    return u, vt


def frobenius_norm(t):
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64)))
