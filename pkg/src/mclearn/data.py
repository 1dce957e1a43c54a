"""Dataset ingestion, synthesis, augmentation, and stratified splits.

Samples are channel-last (H, W, C) float64 tensors with values in [0, 1].
The binary record format is 3073 bytes: one label byte, then three 1024-byte
channel planes, each row-major.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .rng import stream
from .tensor_ops import multi_mode_product

RECORD_BYTES = 3073
_SPLIT_NAMES = ("train", "val", "test")


@dataclass
class LabeledDataset:
    samples: list  # of (tensor, label) pairs
    class_count: int
    split: str = ""
    provenance: str = ""
    _stacked: tuple = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.samples)

    @property
    def input_shape(self):
        return self.samples[0][0].shape

    def stacked(self):
        """(X, y) arrays; cached since datasets are immutable by convention."""
        if self._stacked is None:
            xs = np.stack([s for s, _ in self.samples])
            ys = np.array([c for _, c in self.samples], dtype=np.int64)
            self._stacked = (xs, ys)
        return self._stacked


def load_cifar_binary(path, split="train", class_count=10):
    """Read 3073-byte labeled image records into (32, 32, 3) tensors."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % RECORD_BYTES != 0:
        raise FormatError(f"{path}: size {len(raw)} is not a positive multiple of {RECORD_BYTES}")
    samples = []
    for off in range(0, len(raw), RECORD_BYTES):
        label = raw[off]
        if label >= class_count:
            raise FormatError(f"{path}: label {label} >= class count {class_count}")
        planes = np.frombuffer(raw, dtype=np.uint8, count=3072, offset=off + 1)
        img = planes.reshape(3, 32, 32).transpose(1, 2, 0).astype(np.float64) / 255.0
        samples.append((np.ascontiguousarray(img), int(label)))
    return LabeledDataset(samples, class_count, split=split, provenance=str(path))


def write_cifar_binary(dataset, path):
    """Write samples back out in the 3073-byte record format (bit-exact for
    data that originated as bytes)."""
    with open(path, "wb") as fh:
        for img, label in dataset.samples:
            if img.shape != (32, 32, 3):
                raise FormatError(f"record format requires (32, 32, 3) samples, got {img.shape}")
            planes = np.round(img * 255.0).clip(0, 255).astype(np.uint8).transpose(2, 0, 1)
            fh.write(bytes([label]) + planes.tobytes())


def synthetic_templates(class_count, input_shape, seed):
    """Per-class clean images: a low-multilinear-rank pattern scaled to
    [0, 1]. Consumes the generator exactly as make_synthetic's first phase."""
    rng = stream(seed, "synthetic")
    h, w, c = input_shape
    templates = []
    for _ in range(class_count):
        core = rng.standard_normal((2, 2, 1))
        factors = [(rng.standard_normal((h, 2)), 0),
                   (rng.standard_normal((w, 2)), 1),
                   (rng.standard_normal((c, 1)), 2)]
        raw = multi_mode_product(core, factors)
        lo, hi = raw.min(), raw.max()
        templates.append((raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw))
    return templates


def make_synthetic(class_count, samples_per_class, input_shape, seed, noise=0.1):
    """Self-contained labeled dataset: class templates plus uniform noise,
    clipped to [0, 1]. Deterministic per seed."""
    if class_count < 2:
        raise ValueError("need at least 2 classes")
    if len(input_shape) != 3:
        raise ValueError("synthetic generator produces (H, W, C) samples")
    templates = synthetic_templates(class_count, input_shape, seed)
    rng = stream(seed, "synthetic-noise")
    samples = []
    for label, template in enumerate(templates):
        for _ in range(samples_per_class):
            img = template if noise == 0 else np.clip(
                template + rng.uniform(-noise, noise, size=template.shape), 0.0, 1.0)
            samples.append((np.ascontiguousarray(img), label))
    return LabeledDataset(samples, class_count, split="all",
                          provenance=f"synthetic(seed={seed})")


def apply_augment(batch, flips, shifts):
    """Deterministic core of augment: per-sample horizontal flip and integer
    (rows, cols) shift with zero fill. Positive shift moves content toward
    higher indices."""
    batch = np.asarray(batch, dtype=np.float64)
    out = np.zeros_like(batch)
    h, w = batch.shape[1], batch.shape[2]
    for n in range(batch.shape[0]):
        img = batch[n, :, ::-1, :] if flips[n] else batch[n]
        dy, dx = int(shifts[n][0]), int(shifts[n][1])
        dst_r = slice(max(dy, 0), h + min(dy, 0))
        src_r = slice(max(-dy, 0), h + min(-dy, 0))
        dst_c = slice(max(dx, 0), w + min(dx, 0))
        src_c = slice(max(-dx, 0), w + min(-dx, 0))
        out[n, dst_r, dst_c, :] = img[src_r, src_c, :]
    return out


def augment(batch, rng, max_shift=None):
    """Random flip (p=0.5) and shift per sample; shift range scales with
    image height (4 px at 32 rows, never below 1)."""
    batch = np.asarray(batch)
    if batch.ndim < 4:
        raise ValueError("augment expects a (B, H, W, C) batch")
    s = max_shift if max_shift is not None else max(1, round(4 * batch.shape[1] / 32))
    flips = rng.random(batch.shape[0]) < 0.5
    shifts = rng.integers(-s, s + 1, size=(batch.shape[0], 2))
    return apply_augment(batch, flips, shifts)


def split(dataset, fractions, seed):
    """Class-stratified, reproducible partition.

    Returns one dataset per fraction (named train/val/test for the first
    three). Per-class counts stay within 1 of exact proportionality; with
    fractions summing to 1 every sample lands in exactly one split.
    """
    fractions = tuple(float(f) for f in fractions)
    if not fractions or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if sum(fractions) > 1.0 + 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)} > 1")

    n = len(dataset)
    by_class = {}
    for i, (_, label) in enumerate(dataset.samples):
        by_class.setdefault(label, []).append(i)

    # Global targets by largest remainder.
    quotas = [f * n for f in fractions]
    targets = [int(q) for q in quotas]
    want = int(sum(quotas) + 1e-9) - sum(targets)
    order = sorted(range(len(fractions)), key=lambda j: (-(quotas[j] - targets[j]), j))
    for j in order[:want]:
        targets[j] += 1

    rng = stream(seed, "split")
    assigned = [[] for _ in fractions]
    counts = [0] * len(fractions)
    leftovers = []
    for label in sorted(by_class):
        idx = list(by_class[label])
        perm = rng.permutation(len(idx))
        idx = [idx[p] for p in perm]
        cursor = 0
        for j, f in enumerate(fractions):
            b = int(f * len(idx))
            assigned[j].extend(idx[cursor:cursor + b])
            counts[j] += b
            cursor += b
        leftovers.append(idx[cursor:])

    # Leftovers go to the neediest split; at most one per class per split so
    # per-class counts never drift more than 1 from proportionality.
    for extras in leftovers:
        used = set()
        for i in extras:
            candidates = [j for j in range(len(fractions)) if j not in used]
            if not candidates:
                break
            candidates.sort(key=lambda j: (counts[j] - targets[j], j))
            j = candidates[0]
            if counts[j] >= targets[j] and sum(fractions) < 1.0 - 1e-9:
                continue  # over target and fractions don't cover everything
            assigned[j].append(i)
            counts[j] += 1
            used.add(j)

    out = []
    for j, ids in enumerate(assigned):
        name = _SPLIT_NAMES[j] if len(fractions) <= 3 else f"split{j}"
        if len(fractions) == 2 and j == 1:
            name = "test"
        out.append(LabeledDataset([dataset.samples[i] for i in sorted(ids)],
                                  dataset.class_count, split=name,
                                  provenance=dataset.provenance))
    return tuple(out)
