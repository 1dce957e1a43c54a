"""Client/server deployment simulator.

The client owns the sensing operators: per sample it sizes a prefix
measurement to the channel budget, frames it, and sends the bytes. The
server decodes, zero-pads back to the full measurement shape, and predicts
with either the single adaptive model or a per-dims finetuned table entry.
Time is simulated (bytes / rate); the byte transport is an in-process FIFO
by default, with a loopback TCP option carrying identical bytes.
"""

import itertools
import socket
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, PacketError
from .masks import MaskDims, as_mask_dims
from .network import network_forward
from .protocol import decode_packet, encode_packet, header_size, packet_size
from .tensor_ops import subtensor_prefix


@dataclass(frozen=True)
class ChannelTrace:
    """Step function of available bandwidth: (timestamp s, bytes/s) pairs
    with strictly increasing timestamps."""

    steps: tuple

    def __post_init__(self):
        steps = tuple((float(t), float(r)) for t, r in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise FormatError("trace must have at least one step")
        for (t0, _), (t1, _) in zip(steps, steps[1:]):
            if t1 <= t0:
                raise FormatError(f"timestamps must strictly increase ({t0} -> {t1})")
        if any(r < 0 for _, r in steps):
            raise FormatError("rates must be >= 0")

    def rate_at(self, t):
        rate = self.steps[0][1]
        for ts, r in self.steps:
            if ts <= t:
                rate = r
            else:
                break
        return rate

    @classmethod
    def parse(cls, text):
        steps = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"trace line {lineno}: expected 'timestamp_s rate_Bps'")
            try:
                steps.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise FormatError(f"trace line {lineno}: {exc}") from exc
        return cls(tuple(steps))

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def to_text(self):
        return "".join(f"{t:g} {r:g}\n" for t, r in self.steps)


class MemoryChannel:
    """Loss-free FIFO byte channel: one writer, one reader."""

    def __init__(self):
        self._queue = deque()

    def send(self, payload):
        self._queue.append(bytes(payload))

    def recv(self):
        return self._queue.popleft()

    def close(self):
        pass


class TcpLoopbackChannel:
    """Same packets over a localhost socket pair; a reader thread reassembles
    message boundaries from the self-delimiting headers."""

    def __init__(self):
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.bind(("127.0.0.1", 0))
        server.listen(1)
        self._client = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._client.connect(server.getsockname())
        self._peer, _ = server.accept()
        server.close()
        self._packets = deque()
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_exact(self, n):
        chunks = []
        remaining = n
        while remaining:
            chunk = self._peer.recv(remaining)
            if not chunk:
                raise ConnectionError("peer closed")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _read_loop(self):
        try:
            while True:
                prefix = self._read_exact(6)
                mode_count = prefix[5]
                rest_header = self._read_exact(header_size(mode_count) - 6)
                payload_len = int.from_bytes(rest_header[-4:], "little")
                body = self._read_exact(payload_len + 4)
                with self._ready:
                    self._packets.append(prefix + rest_header + body)
                    self._ready.notify()
        except (ConnectionError, OSError):
            pass

    def send(self, payload):
        self._client.sendall(payload)

    def recv(self):
        with self._ready:
            while not self._packets:
                self._ready.wait()
            return self._packets.popleft()

    def close(self):
        self._client.close()
        self._peer.close()


def open_channel(transport):
    if transport == "memory":
        return MemoryChannel()
    if transport == "tcp":
        return TcpLoopbackChannel()
    raise ValueError(f"unknown transport {transport!r}")


def _best_dims(budget_bytes, candidates, max_dims):
    """Feasible candidate maximizing element count; ties prefer balanced
    shapes (smallest spread of dims[k]/max_dims[k]), then lexicographic."""
    best = None
    best_key = None
    for dims in candidates:
        if packet_size(dims) > budget_bytes:
            continue
        count = 1
        for m in dims:
            count *= m
        ratios = [m / mx for m, mx in zip(dims, max_dims)]
        key = (-count, max(ratios) - min(ratios), dims)
        if best_key is None or key < best_key:
            best, best_key = dims, key
    return best


def rate_controller(channel_rate, deadline, spec):
    """Pick the largest measurement dims whose packet fits in one deadline
    at the given rate; fall back to min_dims when nothing fits."""
    if deadline <= 0:
        raise ValueError("deadline must be positive")
    budget = channel_rate * deadline
    ranges = [range(lo, hi + 1) for lo, hi in zip(spec.min_dims, spec.max_dims)]
    best = _best_dims(budget, itertools.product(*ranges), spec.max_dims)
    return MaskDims(best) if best is not None else MaskDims(spec.min_dims)


@dataclass(frozen=True)
class SampleRecord:
    sample_id: int
    dims: tuple
    bytes_sent: int
    send_start_s: float
    transmit_s: float
    predicted: int
    correct: bool
    error: str = ""


@dataclass(frozen=True)
class SessionReport:
    records: tuple
    duration_s: float
    deadline_s: float

    @property
    def samples_per_second(self):
        return len(self.records) / self.duration_s if self.duration_s > 0 else float("inf")

    @property
    def mean_bytes_per_sample(self):
        return float(np.mean([r.bytes_sent for r in self.records])) if self.records else 0.0

    @property
    def accuracy(self):
        return (sum(1 for r in self.records if r.correct) / len(self.records)
                if self.records else 0.0)

    @property
    def correct_per_second(self):
        if self.duration_s <= 0:
            return float("inf")
        return sum(1 for r in self.records if r.correct) / self.duration_s

    def to_lines(self):
        lines = []
        for r in self.records:
            dims = "x".join(str(m) for m in r.dims)
            lines.append(
                f"sample id={r.sample_id} dims={dims} bytes={r.bytes_sent} "
                f"start={r.send_start_s:.6f} transmit={r.transmit_s:.6f} "
                f"pred={r.predicted} correct={int(r.correct)}"
                + (f" error={r.error}" if r.error else ""))
        lines.append(
            f"summary samples={len(self.records)} deadline={self.deadline_s:.6f} "
            f"duration={self.duration_s:.6f} "
            f"samples_per_s={self.samples_per_second:.6f} "
            f"mean_bytes={self.mean_bytes_per_sample:.3f} "
            f"accuracy={self.accuracy:.6f} "
            f"correct_per_s={self.correct_per_second:.6f}")
        return lines

    def to_text(self):
        return "\n".join(self.to_lines()) + "\n"


class PredictionServer:
    """Dispatches decoded measurements to the right predictor: the single
    model, or the finetuned (synthesis, network) pair for the packet's dims."""

    def __init__(self, model, table=None):
        self.model = model
        self.by_dims = None
        if table:
            self.by_dims = {tuple(dims): (synthesis, network)
                            for dims, (synthesis, network) in table.items()}

    def candidate_dims(self):
        return sorted(self.by_dims) if self.by_dims is not None else None

    def predict_measurement(self, z_bar):
        """(predicted label, probabilities) for one prefix measurement."""
        dims = tuple(z_bar.shape)
        if self.by_dims is not None:
            entry = self.by_dims.get(dims)
            if entry is None:
                raise PacketError(f"no finetuned entry for dims {dims}")
            synthesis, network = entry
        else:
            synthesis, network = self.model.synthesis, self.model.network
        batch = np.zeros((1,) + self.model.measurement_shape)
        batch[(0,) + tuple(slice(0, m) for m in dims)] = z_bar
        probs = _predict_from_measurement(synthesis, network, batch)[0]
        return int(np.argmax(probs)), probs

    def predict_packet(self, packet):
        z_bar, sample_id = decode_packet(packet)
        label, _ = self.predict_measurement(z_bar)
        return label, sample_id


def _predict_from_measurement(synthesis, network, z_batch):
    """Server-side half of the pipeline: synthesize and classify an already
    zero-padded measurement batch."""
    z = ad.Var(np.ascontiguousarray(z_batch, dtype=np.float64))
    for k in range(z_batch.ndim - 1):
        z = ad.batch_mode_product(z, ad.Var(synthesis.matrices[k]), k)
    net_vars = {name: ad.Var(value) for name, value in network.params.items()}
    logits = network_forward(network.specs, net_vars, z)
    return ad.softmax(logits.value)


def run_session(model, dataset, trace, deadline, table=None, transport="memory",
                fixed_dims=None):
    """Stream every dataset sample through the simulated channel.

    The sensor follows a fixed cadence of one sample per deadline; a packet
    that takes longer than the deadline to transmit delays the next sample.
    With `table`, the controller only picks dims that have a finetuned
    server entry. `fixed_dims` bypasses the controller (baseline strategy).
    """
    if model.mask_spec is None and fixed_dims is None and table is None:
        raise ValueError("session needs a mask spec, a table, or fixed dims")
    if deadline <= 0:
        raise ValueError("deadline must be positive")
    trace = trace if isinstance(trace, ChannelTrace) else ChannelTrace(tuple(trace))

    server = PredictionServer(model, table)
    channel = open_channel(transport)
    spec = model.mask_spec
    candidates = server.candidate_dims()
    max_dims = spec.max_dims if spec is not None else model.measurement_shape

    records = []
    now = 0.0
    try:
        for sample_id, (signal, label) in enumerate(dataset.samples):
            rate = trace.rate_at(now)
            while rate <= 0:
                upcoming = [t for t, r in trace.steps if t > now and r > 0]
                if not upcoming:
                    raise FormatError(f"zero bandwidth from t={now} onward")
                now = upcoming[0]
                rate = trace.rate_at(now)
            if fixed_dims is not None:
                dims = tuple(as_mask_dims(fixed_dims))
            elif candidates is not None:
                best = _best_dims(rate * deadline, candidates, max_dims)
                dims = best if best is not None else min(candidates)
            else:
                dims = tuple(rate_controller(rate, deadline, spec))

            z = model.sense_signal(signal)
            z_bar = subtensor_prefix(z, dims)
            packet = encode_packet(z_bar, sample_id)
            channel.send(packet)
            received = channel.recv()

            transmit_s = len(packet) / rate
            error = ""
            predicted = -1
            correct = False
            try:
                predicted, echoed_id = server.predict_packet(received)
                correct = bool(predicted == label) and echoed_id == sample_id
            except PacketError as exc:
                error = type(exc).__name__
            records.append(SampleRecord(sample_id, dims, len(packet), now,
                                        transmit_s, predicted, correct, error))
            now += max(deadline, transmit_s)
    finally:
        channel.close()
    return SessionReport(tuple(records), now, deadline)
