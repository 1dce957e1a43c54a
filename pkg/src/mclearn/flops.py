"""Floating-point operation accounting.

Convention: one multiply-add counts as 2 flops. Mode products are costed in
ascending mode order (the order the transforms actually execute), so counts
are deterministic even though other orders would give different totals.
"""

from dataclasses import dataclass

import numpy as np

from .network import Conv2dSpec, DenseSpec, GapSpec, ReluSpec


@dataclass(frozen=True)
class FlopReport:
    mcs_flops: int
    fs_flops: int
    tasknet_flops: int
    vector_sense_flops: int

    @property
    def ratio(self):
        """(sensing + synthesis) cost relative to the classifier."""
        if self.tasknet_flops == 0:
            return float("inf")
        return (self.mcs_flops + self.fs_flops) / self.tasknet_flops


def _mode_chain_flops(from_shape, to_shape):
    shape = list(from_shape)
    total = 0
    for k, target in enumerate(to_shape):
        rest = int(np.prod(shape, dtype=np.int64)) // shape[k]
        total += 2 * target * shape[k] * rest
        shape[k] = target
    return total


def tasknet_flops(specs, input_shape):
    h, w, c = input_shape
    flat = None
    total = 0
    for spec in specs:
        if isinstance(spec, Conv2dSpec):
            ho = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
            wo = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
            total += 2 * c * spec.out_channels * spec.kernel * spec.kernel * ho * wo
            h, w, c = ho, wo, spec.out_channels
        elif isinstance(spec, ReluSpec):
            pass
        elif isinstance(spec, GapSpec):
            flat = c
        elif isinstance(spec, DenseSpec):
            total += 2 * flat * spec.out_features
            flat = spec.out_features
        else:
            raise ValueError(f"unknown layer kind {spec!r}")
    return total


def count_flops(input_shape, measurement_shape, specs):
    """Cost the compression pipeline against its classifier.

    vector_sense_flops is the dense single-matrix baseline at the same
    measurement count (flattened signal in, flattened measurement out).
    """
    input_shape = tuple(int(e) for e in input_shape)
    measurement_shape = tuple(int(e) for e in measurement_shape)
    mcs = _mode_chain_flops(input_shape, measurement_shape)
    fs = _mode_chain_flops(measurement_shape, input_shape)
    net = tasknet_flops(specs, input_shape)
    dense_baseline = 2 * int(np.prod(measurement_shape, dtype=np.int64)) * int(
        np.prod(input_shape, dtype=np.int64))
    return FlopReport(mcs, fs, net, dense_baseline)


def reference_network_specs(class_count=10):
    """Full-scale all-convolutional reference classifier (32x32x3 inputs):
    three 3x3 stages of widths 96/192 with strided downsampling, two 1x1
    convs, then global pooling. Used for cost reporting only."""
    return (
        Conv2dSpec(96, 3, 1, 1), ReluSpec(),
        Conv2dSpec(96, 3, 1, 1), ReluSpec(),
        Conv2dSpec(96, 3, 2, 1), ReluSpec(),
        Conv2dSpec(192, 3, 1, 1), ReluSpec(),
        Conv2dSpec(192, 3, 1, 1), ReluSpec(),
        Conv2dSpec(192, 3, 2, 1), ReluSpec(),
        Conv2dSpec(192, 3, 1, 1), ReluSpec(),
        Conv2dSpec(192, 1, 1, 0), ReluSpec(),
        Conv2dSpec(class_count, 1, 1, 0),
        GapSpec(),
    )
