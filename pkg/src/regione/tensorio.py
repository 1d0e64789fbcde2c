"""``RGNE`` tensor files.

Layout: magic ``b"RGNE"``, one version byte (1), little-endian u32 rank,
``rank`` little-endian u32 dims, then float32 little-endian data in
row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

MAGIC = b"RGNE"
VERSION = 1


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    head = MAGIC + bytes([VERSION]) + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def decode_tensor(data: bytes) -> np.ndarray:
    if data[:4] != MAGIC:
        raise InvalidArgumentError("not an RGNE tensor (bad magic)")
    if data[4] != VERSION:
        raise InvalidArgumentError(f"unsupported RGNE version {data[4]}")
    (rank,) = struct.unpack_from("<I", data, 5)
    dims = struct.unpack_from(f"<{rank}I", data, 9)
    offset = 9 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) - offset != 4 * count:
        raise InvalidArgumentError(f"RGNE payload is {len(data) - offset} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
