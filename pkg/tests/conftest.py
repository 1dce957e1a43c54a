import numpy as np
import pytest

from mclearn.data import make_synthetic
from mclearn.masks import MaskSpec
from mclearn.model import MclModel
from mclearn.network import Conv2dSpec, DenseSpec, GapSpec, ReluSpec, TaskNetwork, init_params
from mclearn.rng import stream
from mclearn.sensing import SensingOperatorSet, SynthesisOperatorSet


def tiny_network(input_shape, class_count, seed, channels=4):
    """One conv block + pooled dense head, randomly initialized."""
    specs = (Conv2dSpec(channels, 3, 1, 1), ReluSpec(), GapSpec(), DenseSpec(class_count))
    params = init_params(specs, input_shape, stream(seed, "test.network"))
    return TaskNetwork(specs, input_shape, class_count, params)


def random_model(input_shape=(6, 6, 2), measurement_shape=(3, 3, 1), class_count=2,
                 seed=11, mask_min=None, channels=4, training_mode="init"):
    """Randomly initialized model for unit tests (no data, no HOSVD)."""
    rng = stream(seed, "test.operators")
    sensing = SensingOperatorSet(
        tuple(rng.standard_normal((m, i)) * 0.5 for m, i in zip(measurement_shape, input_shape)),
        tuple(input_shape), tuple(measurement_shape))
    synthesis = SynthesisOperatorSet(
        tuple(rng.standard_normal((i, m)) * 0.5 for m, i in zip(measurement_shape, input_shape)),
        tuple(input_shape), tuple(measurement_shape))
    mask_spec = MaskSpec(mask_min, measurement_shape) if mask_min is not None else None
    network = tiny_network(tuple(input_shape), class_count, seed, channels)
    return MclModel(sensing, synthesis, network, mask_spec, class_count, seed, training_mode)


@pytest.fixture(scope="session")
def toy_dataset():
    return make_synthetic(4, 40, (8, 8, 2), seed=21)


@pytest.fixture()
def tiny_model():
    return random_model()


def random_batch(shape, n=4, seed=5):
    return stream(seed, "test.batch").random((n,) + tuple(shape))


def finite_difference_check(model, batch, labels, mask_dims=None, h=1e-5,
                            keep=None, rel_tol=1e-4):
    """Compare analytic gradients of the mean cross-entropy against central
    finite differences, elementwise (or on a keep(n) subset of indices)."""
    from mclearn.training import backward, forward

    res = forward(model, batch, mask_dims=mask_dims)
    _, grads = backward(res, labels)

    def loss_at(params):
        m = model.with_parameters(params)
        r = forward(m, batch, mask_dims=mask_dims)
        z = r.logits.value
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return float((lse - z[np.arange(len(labels)), labels]).mean())

    base = model.parameters()
    checked = 0
    for name, g in grads.items():
        flat = base[name].reshape(-1)
        indices = range(flat.size) if keep is None else keep(flat.size)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_at(base)
            flat[i] = orig - h
            lo = loss_at(base)
            flat[i] = orig
            fd = (hi - lo) / (2 * h)
            an = g.reshape(-1)[i]
            if abs(an) > 1e-6:
                rel = abs(an - fd) / max(abs(an), abs(fd))
                assert rel < rel_tol, (name, i, an, fd, rel)
            else:
                assert abs(fd) < 1e-5, (name, i, an, fd)
            checked += 1
    return checked
