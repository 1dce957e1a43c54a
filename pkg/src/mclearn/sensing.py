"""Separable compressive sensing and feature synthesis.

A signal of shape (I_1, ..., I_K) is compressed by one matrix per mode into
a measurement of shape (M_1, ..., M_K); synthesis lifts a measurement back
to the signal shape with transpose-shaped matrices. Both transforms apply
their matrices in ascending mode order.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor_ops import as_tensor, fix_signs, mode_product, mode_unfold


@dataclass(frozen=True)
class SensingOperatorSet:
    """Per-mode compression matrices, matrices[k] of shape M_k x I_k."""

    matrices: tuple
    input_shape: tuple
    measurement_shape: tuple

    def __post_init__(self):
        if len(self.matrices) != len(self.input_shape) or len(self.input_shape) != len(self.measurement_shape):
            raise ShapeError("operator count must match tensor rank")
        for k, a in enumerate(self.matrices):
            m_k, i_k = self.measurement_shape[k], self.input_shape[k]
            if a.shape != (m_k, i_k):
                raise ShapeError(f"mode-{k} sensing matrix is {a.shape}, expected {(m_k, i_k)}")
            if m_k > i_k:
                raise ShapeError(f"mode-{k} measurement extent {m_k} exceeds input extent {i_k}")


@dataclass(frozen=True)
class SynthesisOperatorSet:
    """Per-mode lifting matrices, matrices[k] of shape I_k x M_k."""

    matrices: tuple
    input_shape: tuple
    measurement_shape: tuple

    def __post_init__(self):
        if len(self.matrices) != len(self.input_shape) or len(self.input_shape) != len(self.measurement_shape):
            raise ShapeError("operator count must match tensor rank")
        for k, a in enumerate(self.matrices):
            i_k, m_k = self.input_shape[k], self.measurement_shape[k]
            if a.shape != (i_k, m_k):
                raise ShapeError(f"mode-{k} synthesis matrix is {a.shape}, expected {(i_k, m_k)}")


@dataclass(frozen=True)
class HosvdInit:
    sensing: SensingOperatorSet
    synthesis: SynthesisOperatorSet
    core_energy: float


def identity_sensing(input_shape):
    """Identity operators: sensing is a no-op (measurement == input)."""
    shape = tuple(int(e) for e in input_shape)
    mats = tuple(np.eye(e) for e in shape)
    return SensingOperatorSet(mats, shape, shape)


def sense(y, ops):
    """Compress a signal: apply each mode's sensing matrix in ascending
    mode order."""
    y = as_tensor(y)
    if y.shape != ops.input_shape:
        raise ShapeError(f"signal shape {y.shape} != operator input shape {ops.input_shape}")
    z = y
    for k, a in enumerate(ops.matrices):
        z = mode_product(z, a, k)
    return z


def synthesize(z, ops):
    """Lift a measurement back to the signal shape, ascending mode order."""
    z = as_tensor(z)
    if z.shape != ops.measurement_shape:
        raise ShapeError(f"measurement shape {z.shape} != operator shape {ops.measurement_shape}")
    t = z
    for k, a in enumerate(ops.matrices):
        t = mode_product(t, a, k)
    return t


def vector_sense(y_flat, phi):
    """Dense single-matrix compression of a flattened signal."""
    y_flat = np.ascontiguousarray(y_flat, dtype=np.float64).reshape(-1)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] != y_flat.shape[0]:
        raise ShapeError(f"projection {phi.shape} does not match signal length {y_flat.shape[0]}")
    return phi @ y_flat


def hosvd_init(dataset, measurement_shape):
    """Initialize sensing/synthesis operators from data.

    Stacks the samples along a trailing mode and takes, per original mode,
    the leading left singular vectors of that mode's unfolding (computed via
    the small Gram matrix accumulated sample by sample). Sensing matrices
    are the transposed bases; synthesis matrices are the bases themselves,
    so at full rank the round trip is energy-preserving.

    Returns a HosvdInit whose core_energy is the squared-Frobenius fraction
    of dataset energy captured by the truncated measurement.
    """
    samples = [as_tensor(y) for y in dataset]
    if not samples:
        raise ValueError("hosvd_init needs a non-empty dataset")
    input_shape = samples[0].shape
    for y in samples:
        if y.shape != input_shape:
            raise ShapeError("all samples must share one shape")
    measurement_shape = tuple(int(m) for m in measurement_shape)
    if len(measurement_shape) != len(input_shape):
        raise ShapeError("measurement rank must match input rank")
    for k, (m, i) in enumerate(zip(measurement_shape, input_shape)):
        if not 1 <= m <= i:
            raise ShapeError(f"measurement extent {m} out of range [1, {i}] at mode {k}")

    rank = len(input_shape)
    sensing_mats = []
    synthesis_mats = []
    for k in range(rank):
        gram = np.zeros((input_shape[k], input_shape[k]))
        for y in samples:
            unf = mode_unfold(y, k)
            gram += unf @ unf.T
        w, v = np.linalg.eigh(gram)
        basis = fix_signs(v[:, ::-1][:, : measurement_shape[k]])
        sensing_mats.append(np.ascontiguousarray(basis.T))
        synthesis_mats.append(np.ascontiguousarray(basis))

    ops = SensingOperatorSet(tuple(sensing_mats), input_shape, measurement_shape)
    total = sum(float(np.sum(y * y)) for y in samples)
    core = sum(float(np.sum(np.square(sense(y, ops)))) for y in samples)
    energy = core / total if total > 0 else 1.0
    synth = SynthesisOperatorSet(tuple(synthesis_mats), input_shape, measurement_shape)
    return HosvdInit(ops, synth, energy)
