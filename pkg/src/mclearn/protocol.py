"""Measurement packet framing.

Layout (all little-endian):

    offset  size  field
    0       4     magic "MCLP"
    4       1     version (1)
    5       1     mode count K
    6       2K    dims, one u16 per mode
    6+2K    1     payload dtype (0 = float32)
    7+2K    8     sample id (u64)
    15+2K   4     payload length in bytes (u32, = 4 * prod(dims))
    19+2K   ...   payload: row-major float32 values
    end-4   4     crc32 over every byte before this field

Decode checks run magic, version, then crc, then structure, so corrupting
any byte past the version field surfaces as a crc failure.
"""

import struct
import zlib

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    CrcError,
    LengthMismatchError,
    PacketError,
)

MAGIC = b"MCLP"
VERSION = 1
DTYPE_F32 = 0
MAX_MODES = 8
MAX_EXTENT = 0xFFFF


def header_size(mode_count):
    return 4 + 1 + 1 + 2 * mode_count + 1 + 8 + 4


def packet_size(dims):
    """Total encoded size in bytes for a measurement of the given dims."""
    dims = tuple(int(m) for m in dims)
    count = 1
    for m in dims:
        count *= m
    return header_size(len(dims)) + 4 * count + 4


def encode_packet(z_bar, sample_id):
    """Frame a prefix measurement for transmission (float32 payload)."""
    z_bar = np.ascontiguousarray(z_bar, dtype=np.float64)
    if z_bar.ndim < 1 or z_bar.ndim > MAX_MODES:
        raise PacketError(f"rank {z_bar.ndim} outside [1, {MAX_MODES}]")
    for e in z_bar.shape:
        if not 1 <= e <= MAX_EXTENT:
            raise PacketError(f"extent {e} outside [1, {MAX_EXTENT}]")
    if not 0 <= int(sample_id) < 2**64:
        raise PacketError("sample id must fit in 64 bits")
    payload = z_bar.astype("<f4").tobytes(order="C")
    head = struct.pack(
        f"<4sBB{z_bar.ndim}HBQI",
        MAGIC, VERSION, z_bar.ndim, *z_bar.shape, DTYPE_F32,
        int(sample_id), len(payload))
    body = head + payload
    return body + struct.pack("<I", zlib.crc32(body))


def decode_packet(buf):
    """Parse and validate a framed measurement.

    Returns (tensor float64, sample_id). Raises BadMagicError,
    BadVersionError, LengthMismatchError, or CrcError.
    """
    buf = bytes(buf)
    if len(buf) < 4:
        raise LengthMismatchError(f"buffer of {len(buf)} bytes is shorter than the magic")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    if len(buf) < 6:
        raise LengthMismatchError("truncated before version/mode count")
    if buf[4] != VERSION:
        raise BadVersionError(f"unsupported version {buf[4]}")
    if len(buf) < header_size(1) + 4:
        raise LengthMismatchError(f"buffer of {len(buf)} bytes cannot hold a packet")
    (stored_crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != stored_crc:
        raise CrcError("crc mismatch")

    mode_count = buf[5]
    if not 1 <= mode_count <= MAX_MODES:
        raise LengthMismatchError(f"mode count {mode_count} outside [1, {MAX_MODES}]")
    head = header_size(mode_count)
    if len(buf) < head + 4:
        raise LengthMismatchError("buffer shorter than its declared header")
    dims = struct.unpack_from(f"<{mode_count}H", buf, 6)
    dtype, sample_id, payload_len = struct.unpack_from("<BQI", buf, 6 + 2 * mode_count)
    if dtype != DTYPE_F32:
        raise BadVersionError(f"unsupported payload dtype {dtype}")
    count = 1
    for m in dims:
        if m == 0:
            raise LengthMismatchError("zero extent in dims")
        count *= m
    if payload_len != 4 * count:
        raise LengthMismatchError(f"payload length {payload_len} != 4*prod(dims) = {4 * count}")
    if len(buf) != head + payload_len + 4:
        raise LengthMismatchError(f"total size {len(buf)} != header + payload + crc")
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=head)
    return values.astype(np.float64).reshape(dims), sample_id
