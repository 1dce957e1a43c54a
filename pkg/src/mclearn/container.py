"""Model container file format.

Layout (little-endian):

    magic "MCL1"
    u16 format version (1)
    u32 metadata entry count, then per entry (keys sorted):
        u16 key length, key utf-8, u32 value length, value utf-8
    u32 tensor count, then per record (names sorted):
        u16 name length, name utf-8, u8 rank, u32 extents, u8 dtype (1=f64),
        raw values
    u32 crc32 over everything prior, skipping the created_at value bytes so
    two otherwise-identical saves differ only in that timestamp field.

A container holds either a complete model (kind=model) or a finetune table
(kind=table): the base model's tensors plus, per dims entry, synthesis and
classifier tensors under a "rate.<dims>." prefix, all sharing one set of
sensing matrices.

Setting SOURCE_DATE_EPOCH pins created_at for fully reproducible bytes.
"""

import os
import struct
import time
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .masks import MaskSpec
from .model import MclModel
from .network import TaskNetwork, specs_from_text, specs_to_text
from .sensing import SensingOperatorSet, SynthesisOperatorSet

MAGIC = b"MCL1"
FORMAT_VERSION = 1
DTYPE_F64 = 1
TIMESTAMP_KEY = "created_at"


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _shape_text(shape):
    return ",".join(str(int(e)) for e in shape)


def _shape_from_text(text):
    return tuple(int(v) for v in text.split(","))


def _serialize(metadata, tensors):
    """Returns (bytes, crc) with the timestamp value excluded from the crc."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", FORMAT_VERSION)
    ts_span = None
    buf += struct.pack("<I", len(metadata))
    for key in sorted(metadata):
        kb = key.encode("utf-8")
        vb = str(metadata[key]).encode("utf-8")
        buf += struct.pack("<H", len(kb)) + kb
        buf += struct.pack("<I", len(vb))
        if key == TIMESTAMP_KEY:
            ts_span = (len(buf), len(buf) + len(vb))
        buf += vb
    buf += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += struct.pack("<B", DTYPE_F64)
        buf += arr.astype("<f8").tobytes(order="C")
    if ts_span is None:
        crc = zlib.crc32(buf)
    else:
        crc = zlib.crc32(buf[: ts_span[0]])
        crc = zlib.crc32(buf[ts_span[1]:], crc)
    return bytes(buf + struct.pack("<I", crc)), crc


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("container truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _deserialize(buf):
    try:
        return _deserialize_inner(buf)
    except FormatError:
        raise
    except (UnicodeDecodeError, struct.error, ValueError, OverflowError, MemoryError) as exc:
        raise FormatError(f"malformed container: {exc}") from exc


def _deserialize_inner(buf):
    reader = _Reader(buf)
    if reader.take(4) != MAGIC:
        raise FormatError("not a model container (bad magic)")
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {version}")
    metadata = {}
    ts_span = None
    (meta_count,) = reader.unpack("<I")
    for _ in range(meta_count):
        (klen,) = reader.unpack("<H")
        key = reader.take(klen).decode("utf-8")
        (vlen,) = reader.unpack("<I")
        if key == TIMESTAMP_KEY:
            ts_span = (reader.pos, reader.pos + vlen)
        metadata[key] = reader.take(vlen).decode("utf-8")
    tensors = {}
    (tensor_count,) = reader.unpack("<I")
    for _ in range(tensor_count):
        (nlen,) = reader.unpack("<H")
        name = reader.take(nlen).decode("utf-8")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        (dtype,) = reader.unpack("<B")
        if dtype != DTYPE_F64:
            raise FormatError(f"unsupported tensor dtype tag {dtype}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(8 * count)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    (stored_crc,) = reader.unpack("<I")
    body = buf[:reader.pos - 4]
    if ts_span is None:
        crc = zlib.crc32(body)
    else:
        crc = zlib.crc32(body[: ts_span[0]])
        crc = zlib.crc32(body[ts_span[1]:], crc)
    if crc != stored_crc:
        raise FormatError("container crc mismatch")
    if reader.pos != len(buf):
        raise FormatError("trailing bytes after container crc")
    return metadata, tensors


def _model_metadata(model, kind):
    meta = {
        "kind": kind,
        "class_count": str(model.class_count),
        "input_shape": _shape_text(model.input_shape),
        "measurement_shape": _shape_text(model.measurement_shape),
        "network": specs_to_text(model.network.specs),
        "seed": str(model.seed),
        "training_mode": model.training_mode,
    }
    if model.mask_spec is not None:
        meta["mask_min"] = _shape_text(model.mask_spec.min_dims)
        meta["mask_max"] = _shape_text(model.mask_spec.max_dims)
    return meta


def _model_tensors(model):
    tensors = {}
    for k, a in enumerate(model.sensing.matrices):
        tensors[f"sensing_{k}"] = a
    for k, a in enumerate(model.synthesis.matrices):
        tensors[f"synthesis_{k}"] = a
    for name, a in model.network.params.items():
        tensors[f"net.{name}"] = a
    return tensors


def save_model(model, path, created_at=None, extra_metadata=None):
    meta = _model_metadata(model, "model")
    meta[TIMESTAMP_KEY] = created_at or _timestamp()
    if extra_metadata:
        meta.update(extra_metadata)
    data, _ = _serialize(meta, _model_tensors(model))
    with open(path, "wb") as fh:
        fh.write(data)


def save_table(model, table, path, created_at=None):
    """Persist a finetune table: base model plus per-dims synthesis and
    classifier tensors under rate.<dims>. prefixes."""
    meta = _model_metadata(model, "table")
    meta[TIMESTAMP_KEY] = created_at or _timestamp()
    labels = []
    tensors = _model_tensors(model)
    for dims in sorted(table):
        label = "x".join(str(m) for m in dims)
        labels.append(label)
        synthesis, network = table[dims]
        for k, a in enumerate(synthesis.matrices):
            tensors[f"rate.{label}.synthesis_{k}"] = a
        for name, a in network.params.items():
            tensors[f"rate.{label}.net.{name}"] = a
    meta["table_dims"] = ";".join(labels)
    data, _ = _serialize(meta, tensors)
    with open(path, "wb") as fh:
        fh.write(data)


@dataclass
class LoadedContainer:
    model: MclModel
    metadata: dict
    table: "dict | None" = None

    @property
    def kind(self):
        return self.metadata.get("kind", "model")


def _build_model(metadata, tensors):
    input_shape = _shape_from_text(metadata["input_shape"])
    measurement_shape = _shape_from_text(metadata["measurement_shape"])
    class_count = int(metadata["class_count"])
    specs = specs_from_text(metadata["network"])
    rank = len(input_shape)
    try:
        sensing = SensingOperatorSet(
            tuple(tensors[f"sensing_{k}"] for k in range(rank)), input_shape, measurement_shape)
        synthesis = SynthesisOperatorSet(
            tuple(tensors[f"synthesis_{k}"] for k in range(rank)), input_shape, measurement_shape)
        net_params = {name[4:]: a for name, a in tensors.items() if name.startswith("net.")}
        network = TaskNetwork(specs, input_shape, class_count, net_params)
    except KeyError as exc:
        raise FormatError(f"container missing tensor {exc}") from exc
    mask_spec = None
    if "mask_min" in metadata:
        mask_spec = MaskSpec(_shape_from_text(metadata["mask_min"]),
                             _shape_from_text(metadata["mask_max"]))
    return MclModel(sensing, synthesis, network, mask_spec, class_count,
                    int(metadata["seed"]), metadata["training_mode"])


def load_container(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    metadata, tensors = _deserialize(buf)
    for key in ("kind", "class_count", "input_shape", "measurement_shape",
                "network", "seed", "training_mode"):
        if key not in metadata:
            raise FormatError(f"container missing metadata key {key!r}")
    model = _build_model(metadata, tensors)
    table = None
    if metadata["kind"] == "table":
        table = {}
        labels = [l for l in metadata.get("table_dims", "").split(";") if l]
        for label in labels:
            dims = tuple(int(v) for v in label.split("x"))
            prefix = f"rate.{label}."
            try:
                mats = tuple(tensors[f"{prefix}synthesis_{k}"] for k in range(len(dims)))
                net_params = {name[len(prefix) + 4:]: a for name, a in tensors.items()
                              if name.startswith(prefix + "net.")}
            except KeyError as exc:
                raise FormatError(f"table entry {label} missing tensor {exc}") from exc
            synthesis = SynthesisOperatorSet(mats, model.input_shape, model.measurement_shape)
            if set(net_params) != set(model.network.params):
                raise FormatError(f"table entry {label} classifier params incomplete")
            network = TaskNetwork(model.network.specs, model.input_shape,
                                  model.class_count, net_params)
            table[dims] = (synthesis, network)
    return LoadedContainer(model, metadata, table)
