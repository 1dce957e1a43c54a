"""Training procedures: classifier pretraining, single-rate joint training,
adaptive-rate masked training, server-side finetuning, and evaluation.

All procedures are functional (models in, new models out) and reproducible:
each stochastic ingredient draws from its own named stream, so two
procedures that share a seed consume identical shuffle/augment sequences
even when only one of them samples masks.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import augment
from .errors import DimsError, NumericError, ShapeError
from .masks import as_mask_dims, materialize_mask, sample_mask_dims
from .model import MclModel
from .network import TaskNetwork, make_task_network, network_forward
from .rng import stream
from .sensing import hosvd_init

TRAIN_PHASE = "train"


@dataclass
class Parameter:
    id: str
    value: np.ndarray
    grad: np.ndarray
    trainable: bool = True

    @classmethod
    def of(cls, name, value, trainable=True):
        value = np.array(value, dtype=np.float64)
        return cls(name, value, np.zeros_like(value), trainable)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Bias-corrected update with decoupled weight decay (applied to the
    value before the moment-based delta). Mutates params/state in place."""
    state.step_count += 1
    t = state.step_count
    for name in sorted(grads):
        p = params[name]
        if not p.trainable:
            continue
        g = grads[name]
        if state.weight_decay:
            p.value -= state.lr * state.weight_decay * p.value
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_epochs: tuple = ()
    weight_decay: float = 5e-5
    seed: int = 0
    augment: bool = False
    mask_mode: str = "none"  # none | adaptive

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if list(self.lr_decay_epochs) != sorted(self.lr_decay_epochs):
            raise ValueError("decay epochs must be ascending")
        if self.mask_mode not in ("none", "adaptive"):
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")

    def lr_at(self, epoch):
        drops = sum(1 for e in self.lr_decay_epochs if e <= epoch)
        return self.lr * self.lr_decay_factor ** drops


@dataclass
class ForwardResult:
    probabilities: np.ndarray
    logits: object  # Var; kept so backward can reuse the cached graph
    param_vars: dict


def _pipeline_graph(model, param_vars, batch, mask=None, prefix_dims=None):
    """Input batch -> measurement -> (optional mask or prefix) -> feature ->
    logits, as one differentiable graph."""
    x = ad.Var(np.ascontiguousarray(batch, dtype=np.float64))
    z = x
    for k in range(len(model.input_shape)):
        z = ad.batch_mode_product(z, param_vars[f"sensing_{k}"], k)
    if prefix_dims is not None:
        z = ad.prefix_pad_batch(z, tuple(prefix_dims))
    elif mask is not None:
        z = ad.mul_const(z, mask)
    t = z
    for k in range(len(model.input_shape)):
        t = ad.batch_mode_product(t, param_vars[f"synthesis_{k}"], k)
    net_vars = {name[4:]: v for name, v in param_vars.items() if name.startswith("net.")}
    return network_forward(model.network.specs, net_vars, t)


def _check_batch(model, batch):
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    if batch.ndim == len(model.input_shape):
        batch = batch[None]
    if batch.shape[1:] != model.input_shape:
        raise ShapeError(f"batch shape {batch.shape[1:]} != model input {model.input_shape}")
    return batch


def forward(model, batch, mask_dims=None):
    """Class probabilities for a batch, optionally under a prefix mask of
    the given dims; returns the cached graph for backward."""
    batch = _check_batch(model, batch)
    mask = None
    if mask_dims is not None:
        dims = as_mask_dims(mask_dims)
        if model.mask_spec is not None and not model.mask_spec.contains(dims.dims):
            raise DimsError(f"dims {dims.dims} outside the model's mask spec")
        mask = materialize_mask(dims, model.measurement_shape)
    param_vars = {name: ad.Var(value) for name, value in model.parameters().items()}
    logits = _pipeline_graph(model, param_vars, batch, mask=mask)
    return ForwardResult(ad.softmax(logits.value), logits, param_vars)


def backward(result, labels):
    """Mean cross-entropy loss and gradients for every parameter in the
    cached graph."""
    labels = np.asarray(labels, dtype=np.int64)
    loss, _ = ad.softmax_cross_entropy(result.logits, labels)
    ad.backward(loss)
    grads = {}
    for name, var in result.param_vars.items():
        grads[name] = var.grad if var.grad is not None else np.zeros_like(var.value)
    return float(loss.value), grads


def predict(model, batch, dims=None):
    """Deployment-path probabilities: keep the dims corner of the
    measurement, zero the rest, then synthesize and classify."""
    batch = _check_batch(model, batch)
    param_vars = {name: ad.Var(value) for name, value in model.parameters().items()}
    prefix = tuple(as_mask_dims(dims)) if dims is not None else None
    if prefix is not None:
        for k, (m, e) in enumerate(zip(prefix, model.measurement_shape)):
            if not 1 <= m <= e:
                raise DimsError(f"mode {k}: dims {m} outside measurement extent {e}")
    logits = _pipeline_graph(model, param_vars, batch, prefix_dims=prefix)
    return ad.softmax(logits.value)


def _validate_eval_dims(model, dims):
    dims = as_mask_dims(dims)
    if model.training_mode == "single" and dims.dims != model.measurement_shape:
        raise DimsError("single-rate models evaluate only at their trained measurement shape")
    if model.training_mode == "adaptive" and model.mask_spec is not None \
            and not model.mask_spec.contains(dims.dims):
        raise DimsError(f"dims {dims.dims} outside the adaptive model's mask spec")
    for k, (m, e) in enumerate(zip(dims.dims, model.measurement_shape)):
        if not 1 <= m <= e:
            raise DimsError(f"mode {k}: dims {m} outside measurement extent {e}")
    return dims


def evaluate(model, dims, dataset, batch_size=256):
    """Fraction of correct argmax predictions over the dataset, using the
    deployment path at the given dims."""
    dims = _validate_eval_dims(model, dims)
    xs, ys = dataset.stacked()
    correct = 0
    for start in range(0, len(ys), batch_size):
        probs = predict(model, xs[start:start + batch_size], dims)
        correct += int(np.sum(np.argmax(probs, axis=1) == ys[start:start + batch_size]))
    return correct / len(ys)


def _format_mask_histogram(counter):
    if not counter:
        return "-"
    return ";".join(f"{label}:{counter[label]}" for label in sorted(counter))


def _epoch_line(epoch, split, loss, acc, lr, masks="-"):
    return (f"epoch={epoch} split={split} loss={loss:.6f} acc={acc:.6f} "
            f"lr={lr:.6g} masks={masks}")


def _train_params(params, model, dataset, cfg, phase, *, mask_rng=None,
                  mask_spec=None, prefix_dims=None, sink=None, val_dataset=None):
    """Shared mini-batch loop. params is a dict of Parameter; only trainable
    entries are updated. Returns the per-epoch log lines."""
    xs, ys = dataset.stacked()
    n = len(ys)
    shuffle_rng = stream(cfg.seed, f"{phase}.shuffle")
    augment_rng = stream(cfg.seed, f"{phase}.augment")
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    lines = []

    def emit(line):
        lines.append(line)
        if sink is not None:
            sink(line)

    for epoch in range(cfg.epochs):
        state.lr = cfg.lr_at(epoch)
        perm = shuffle_rng.permutation(n)
        loss_sum, correct, seen = 0.0, 0, 0
        mask_counts = Counter()
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = xs[idx], ys[idx]
            if cfg.augment:
                xb = augment(xb, augment_rng)
            mask = None
            if mask_rng is not None:
                dims_list = [sample_mask_dims(mask_spec, mask_rng) for _ in range(len(idx))]
                mask = np.stack([materialize_mask(d, model.measurement_shape) for d in dims_list])
                mask_counts.update(d.label() for d in dims_list)
            param_vars = {name: ad.Var(p.value) for name, p in params.items()}
            logits = _pipeline_graph(model, param_vars, xb, mask=mask, prefix_dims=prefix_dims)
            loss, grads = backward(ForwardResult(None, logits, param_vars), yb)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            trainable = [name for name, p in params.items() if p.trainable]
            for name in trainable:
                params[name].grad[...] = grads[name]
            adam_step(params, {name: params[name].grad for name in trainable}, state)
            for name in trainable:
                params[name].grad[...] = 0.0
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits.value, axis=1) == yb))
            seen += len(idx)
        emit(_epoch_line(epoch, "train", loss_sum / seen, correct / seen,
                         state.lr, _format_mask_histogram(mask_counts)))
        if val_dataset is not None:
            current = model.with_parameters({k: p.value for k, p in params.items()})
            val_acc = evaluate(current, model.measurement_shape, val_dataset)
            emit(_epoch_line(epoch, "val", 0.0, val_acc, state.lr))
    return lines


def _pretrain_graph_model(network):
    """Adapter so the shared loop can train a bare classifier on raw
    signals: identity sensing/synthesis of rank 0 (no mode products)."""

    class _Bare:
        input_shape = ()
        measurement_shape = ()

    bare = _Bare()
    bare.network = network
    return bare


def pretrain_task_network(network, dataset, cfg, sink=None):
    """Train the classifier alone on high-resolution signals."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    params = {f"net.{name}": Parameter.of(f"net.{name}", value)
              for name, value in network.params.items()}
    bare = _pretrain_graph_model(network)
    _train_params(params, bare, dataset, cfg, "pretrain", sink=sink)
    trained = {name: params[f"net.{name}"].value for name in network.params}
    return TaskNetwork(network.specs, network.input_shape, network.class_count, trained)


def train_single_rate(model, dataset, cfg, sink=None, val_dataset=None):
    """Jointly optimize sensing, synthesis, and classifier at the model's
    fixed measurement shape."""
    params = {name: Parameter.of(name, value) for name, value in model.parameters().items()}
    _train_params(params, model, dataset, cfg, TRAIN_PHASE, sink=sink, val_dataset=val_dataset)
    return model.with_parameters({k: p.value for k, p in params.items()}, training_mode="single")


def train_adaptive(model, dataset, cfg, sink=None, val_dataset=None):
    """Joint optimization under per-sample random prefix masks; the result
    serves every dims within the model's mask spec."""
    if model.mask_spec is None:
        raise ValueError("adaptive training requires a mask spec")
    params = {name: Parameter.of(name, value) for name, value in model.parameters().items()}
    mask_rng = stream(cfg.seed, f"{TRAIN_PHASE}.mask")
    _train_params(params, model, dataset, cfg, TRAIN_PHASE, mask_rng=mask_rng,
                  mask_spec=model.mask_spec, sink=sink, val_dataset=val_dataset)
    return model.with_parameters({k: p.value for k, p in params.items()},
                                 training_mode="adaptive")


def initialize_model(dataset, measurement_shape, seed, widths=(16, 32),
                     mask_spec=None, pretrain_cfg=None, sink=None):
    """Data-driven initialization: sensing/synthesis from the dataset's
    per-mode singular bases, classifier freshly initialized and (optionally)
    pretrained on the raw signals. Returns (model, core_energy)."""
    signals = [x for x, _ in dataset.samples]
    init = hosvd_init(signals, measurement_shape)
    network = make_task_network(dataset.input_shape, dataset.class_count,
                                stream(seed, "init.network"), widths=widths)
    if pretrain_cfg is not None and pretrain_cfg.epochs > 0:
        network = pretrain_task_network(network, dataset, pretrain_cfg, sink=sink)
    model = MclModel(init.sensing, init.synthesis, network, mask_spec,
                     dataset.class_count, seed, "init")
    return model, init.core_energy


def finetune_server_side(model, dims, dataset, cfg, sink=None):
    """Refit synthesis + classifier for one fixed dims over the deployment
    path; sensing operators stay bitwise untouched."""
    dims = as_mask_dims(dims)
    if model.mask_spec is not None and not model.mask_spec.contains(dims.dims):
        raise DimsError(f"dims {dims.dims} outside the model's mask spec")
    params = {}
    for name, value in model.parameters().items():
        params[name] = Parameter.of(name, value, trainable=not name.startswith("sensing_"))
    _train_params(params, model, dataset, cfg, f"finetune.{dims.label()}",
                  prefix_dims=dims.dims, sink=sink)
    updated = model.with_parameters({k: p.value for k, p in params.items()})
    return updated.synthesis, updated.network
