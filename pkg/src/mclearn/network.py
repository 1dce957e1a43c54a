"""Task classifier: an all-convolutional stack described by layer specs.

The desk-scale architecture is conv-relu, conv-relu, strided conv, global
average pooling, dense; it keeps the convolution-only character of the
full-scale reference classifier at a fraction of its cost.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ShapeError


@dataclass(frozen=True)
class Conv2dSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class ReluSpec:
    pass


@dataclass(frozen=True)
class GapSpec:
    pass


@dataclass(frozen=True)
class DenseSpec:
    out_features: int


def output_shape(specs, input_shape):
    """Walk layer specs, returning the final feature count."""
    h, w, c = input_shape
    flat = None
    for spec in specs:
        if isinstance(spec, Conv2dSpec):
            if flat is not None:
                raise ShapeError("conv layer after pooling/dense")
            h = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
            w = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
            if h < 1 or w < 1:
                raise ShapeError(f"conv reduces spatial extent below 1 ({h}x{w})")
            c = spec.out_channels
        elif isinstance(spec, ReluSpec):
            pass
        elif isinstance(spec, GapSpec):
            flat = c
        elif isinstance(spec, DenseSpec):
            if flat is None:
                raise ShapeError("dense layer requires pooled features")
            flat = spec.out_features
        else:
            raise ValueError(f"unknown layer spec {spec!r}")
    if flat is None:
        raise ShapeError("network must end in pooled dense features")
    return flat


class TaskNetwork:
    """Layer specs plus their parameter arrays (name -> float64 ndarray)."""

    def __init__(self, specs, input_shape, class_count, params):
        self.specs = tuple(specs)
        self.input_shape = tuple(input_shape)
        self.class_count = int(class_count)
        self.params = params
        if output_shape(self.specs, self.input_shape) != self.class_count:
            raise ShapeError("network output length must equal class count")

    def param_names(self):
        return sorted(self.params)

    def copy(self):
        return TaskNetwork(self.specs, self.input_shape, self.class_count,
                           {k: v.copy() for k, v in self.params.items()})


def init_params(specs, input_shape, rng):
    """He-style initialization, consuming the rng in layer order."""
    params = {}
    h, w, c = input_shape
    flat = None
    for i, spec in enumerate(specs):
        if isinstance(spec, Conv2dSpec):
            fan_in = spec.kernel * spec.kernel * c
            params[f"conv{i}.w"] = rng.standard_normal(
                (spec.kernel, spec.kernel, c, spec.out_channels)) * np.sqrt(2.0 / fan_in)
            params[f"conv{i}.b"] = np.zeros(spec.out_channels)
            h = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
            w = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
            c = spec.out_channels
        elif isinstance(spec, GapSpec):
            flat = c
        elif isinstance(spec, DenseSpec):
            params[f"dense{i}.w"] = rng.standard_normal((flat, spec.out_features)) * np.sqrt(2.0 / flat)
            params[f"dense{i}.b"] = np.zeros(spec.out_features)
            flat = spec.out_features
    return params


def make_task_network(input_shape, class_count, rng, widths=(16, 32)):
    """The desk-scale all-convolutional classifier."""
    w1, w2 = widths
    specs = (
        Conv2dSpec(w1, 3, 1, 1),
        ReluSpec(),
        Conv2dSpec(w1, 3, 1, 1),
        ReluSpec(),
        Conv2dSpec(w2, 3, 2, 1),
        ReluSpec(),
        GapSpec(),
        DenseSpec(class_count),
    )
    params = init_params(specs, input_shape, rng)
    return TaskNetwork(specs, input_shape, class_count, params)


def network_forward(specs, param_vars, x):
    """Build the classifier graph from input Var x to logits Var."""
    out = x
    for i, spec in enumerate(specs):
        if isinstance(spec, Conv2dSpec):
            out = ad.conv2d(out, param_vars[f"conv{i}.w"], param_vars[f"conv{i}.b"],
                            stride=spec.stride, padding=spec.padding)
        elif isinstance(spec, ReluSpec):
            out = ad.relu(out)
        elif isinstance(spec, GapSpec):
            out = ad.global_avg_pool(out)
        elif isinstance(spec, DenseSpec):
            out = ad.dense(out, param_vars[f"dense{i}.w"], param_vars[f"dense{i}.b"])
    return out


def specs_to_text(specs):
    parts = []
    for spec in specs:
        if isinstance(spec, Conv2dSpec):
            parts.append(f"conv:{spec.out_channels},{spec.kernel},{spec.stride},{spec.padding}")
        elif isinstance(spec, ReluSpec):
            parts.append("relu")
        elif isinstance(spec, GapSpec):
            parts.append("gap")
        elif isinstance(spec, DenseSpec):
            parts.append(f"dense:{spec.out_features}")
        else:
            raise ValueError(f"unknown layer spec {spec!r}")
    return "|".join(parts)


def specs_from_text(text):
    specs = []
    for part in text.split("|"):
        if part == "relu":
            specs.append(ReluSpec())
        elif part == "gap":
            specs.append(GapSpec())
        elif part.startswith("conv:"):
            c, k, s, p = (int(v) for v in part[5:].split(","))
            specs.append(Conv2dSpec(c, k, s, p))
        elif part.startswith("dense:"):
            specs.append(DenseSpec(int(part[6:])))
        else:
            raise FormatError(f"unknown layer descriptor {part!r}")
    return tuple(specs)
