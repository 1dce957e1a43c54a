"""Stochastic prefix masks.

During training, a binary tensor that is 1 exactly on a random corner block
multiplies the measurement, so one model learns to classify every
measurement size between the configured minimum and maximum. Sizes are
drawn independently and uniformly per mode, one fresh draw per sample.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimsError


@dataclass(frozen=True)
class MaskSpec:
    """Per-mode inclusive size range for sampled measurement dims."""

    min_dims: tuple
    max_dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "min_dims", tuple(int(m) for m in self.min_dims))
        object.__setattr__(self, "max_dims", tuple(int(m) for m in self.max_dims))
        if len(self.min_dims) != len(self.max_dims):
            raise DimsError("min/max rank mismatch")
        for k, (lo, hi) in enumerate(zip(self.min_dims, self.max_dims)):
            if not 1 <= lo <= hi:
                raise DimsError(f"mode {k}: need 1 <= min ({lo}) <= max ({hi})")

    def contains(self, dims):
        dims = tuple(dims)
        return len(dims) == len(self.min_dims) and all(
            lo <= d <= hi for lo, d, hi in zip(self.min_dims, dims, self.max_dims)
        )

    def validate_dims(self, dims):
        if not self.contains(dims):
            raise DimsError(f"dims {tuple(dims)} outside spec [{self.min_dims}, {self.max_dims}]")
        return MaskDims(tuple(dims))


@dataclass(frozen=True)
class MaskDims:
    """One sampled measurement size tuple."""

    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(m) for m in self.dims))
        if any(m < 1 for m in self.dims):
            raise DimsError(f"dims must be >= 1, got {self.dims}")

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)

    def count(self):
        return int(np.prod(self.dims, dtype=np.int64))

    def label(self):
        return "x".join(str(m) for m in self.dims)


def as_mask_dims(dims):
    return dims if isinstance(dims, MaskDims) else MaskDims(tuple(dims))


def sample_mask_dims(spec, rng):
    """Draw one size per mode, uniform over [min, max] inclusive."""
    return MaskDims(tuple(
        int(rng.integers(lo, hi + 1)) for lo, hi in zip(spec.min_dims, spec.max_dims)
    ))


def materialize_mask(dims, full_shape):
    """Binary tensor: 1 on the dims corner block, 0 elsewhere."""
    dims = as_mask_dims(dims)
    full_shape = tuple(int(e) for e in full_shape)
    if len(dims) != len(full_shape):
        raise DimsError(f"dims rank {len(dims)} != shape rank {len(full_shape)}")
    for k, (m, e) in enumerate(zip(dims, full_shape)):
        if m > e:
            raise DimsError(f"mode {k}: dims {m} exceeds extent {e}")
    mask = np.zeros(full_shape)
    mask[tuple(slice(0, m) for m in dims)] = 1.0
    return mask
