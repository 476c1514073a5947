"""FTNS binary tensor files.

Layout: ``b"FTNS"``, u16 version (1), u16 rank, ``rank`` x u64 dims, then the
float32 payload; everything little-endian, payload row-major.
"""
import struct
from pathlib import Path

import numpy as np

from .errors import FanetIOError, ValidationError

MAGIC = b"FTNS"
VERSION = 1


def encode_tensor(array):
    arr = np.asarray(array, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
    header = MAGIC + struct.pack("<HH", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_tensor(blob):
    if blob[:4] != MAGIC:
        raise ValidationError("not an FTNS tensor (bad magic)")
    if len(blob) < 8:
        raise ValidationError("truncated FTNS header")
    version, rank = struct.unpack_from("<HH", blob, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported FTNS version {version}")
    offset = 8 + 8 * rank
    if len(blob) < offset:
        raise ValidationError("truncated FTNS dims")
    shape = struct.unpack_from(f"<{rank}Q", blob, 8)
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(blob) != offset + 4 * count:
        raise ValidationError(f"FTNS payload has {len(blob) - offset} bytes, expected {4 * count}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)


def save_tensor(path, array):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(encode_tensor(array))
    except OSError as exc:
        raise FanetIOError(f"cannot write {path}: {exc}") from exc


def load_tensor(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FanetIOError(f"cannot read {path}: {exc}") from exc
    return decode_tensor(blob)
