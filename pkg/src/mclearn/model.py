"""The three-part model: sensing operators, synthesis operators, and the
task classifier, plus bookkeeping to move parameters in and out of training.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError
from .masks import MaskSpec
from .network import TaskNetwork
from .sensing import SensingOperatorSet, SynthesisOperatorSet, sense


@dataclass(frozen=True)
class MclModel:
    sensing: SensingOperatorSet
    synthesis: SynthesisOperatorSet
    network: TaskNetwork
    mask_spec: "MaskSpec | None"
    class_count: int
    seed: int
    training_mode: str = "init"  # init | single | adaptive | baseline

    def __post_init__(self):
        if self.sensing.input_shape != self.synthesis.input_shape:
            raise ShapeError("sensing and synthesis disagree on input shape")
        if self.sensing.measurement_shape != self.synthesis.measurement_shape:
            raise ShapeError("sensing and synthesis disagree on measurement shape")
        if self.network.input_shape != self.sensing.input_shape:
            raise ShapeError("classifier input shape must equal the signal shape")
        if self.network.class_count != self.class_count:
            raise ShapeError("classifier head does not match class count")
        if self.mask_spec is not None and self.mask_spec.max_dims != self.sensing.measurement_shape:
            raise ShapeError("mask max dims must equal the measurement shape")

    @property
    def input_shape(self):
        return self.sensing.input_shape

    @property
    def measurement_shape(self):
        return self.sensing.measurement_shape

    def sense_signal(self, signal):
        """Client-side acquisition: compress one signal to a measurement."""
        return sense(signal, self.sensing)

    def parameters(self):
        """Copy of every parameter array, keyed by stable names."""
        params = {}
        for k, a in enumerate(self.sensing.matrices):
            params[f"sensing_{k}"] = a.copy()
        for k, a in enumerate(self.synthesis.matrices):
            params[f"synthesis_{k}"] = a.copy()
        for name, a in self.network.params.items():
            params[f"net.{name}"] = a.copy()
        return params

    def with_parameters(self, params, training_mode=None, mask_spec="keep"):
        """Rebuild the model from a parameter dict (inverse of parameters())."""
        rank = len(self.input_shape)
        sensing = SensingOperatorSet(
            tuple(np.ascontiguousarray(params[f"sensing_{k}"]) for k in range(rank)),
            self.input_shape, self.measurement_shape)
        synthesis = SynthesisOperatorSet(
            tuple(np.ascontiguousarray(params[f"synthesis_{k}"]) for k in range(rank)),
            self.input_shape, self.measurement_shape)
        net_params = {name: np.ascontiguousarray(params[f"net.{name}"])
                      for name in self.network.params}
        network = TaskNetwork(self.network.specs, self.network.input_shape,
                              self.network.class_count, net_params)
        return replace(
            self, sensing=sensing, synthesis=synthesis, network=network,
            training_mode=self.training_mode if training_mode is None else training_mode,
            mask_spec=self.mask_spec if mask_spec == "keep" else mask_spec)


def assemble_model(hosvd, network, class_count, seed, mask_spec=None, training_mode="init"):
    return MclModel(hosvd.sensing, hosvd.synthesis, network, mask_spec,
                    class_count, seed, training_mode)
