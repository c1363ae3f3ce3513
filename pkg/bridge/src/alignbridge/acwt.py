"""Writer/reader for the flat named-tensor container ("ACWT").

Byte layout, all little-endian:

    magic   4 bytes  b"ACWT"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u32 | UTF-8 name | rank u32 | dims u32*rank | f32 data row-major

This is the consumer toolkit's on-disk interface; the bridge carries its
own implementation so it stays installable on its own.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import ExportError

MAGIC = b"ACWT"
VERSION = 1

_U32 = struct.Struct("<I")


def write_tensors(path, tensors: dict) -> None:
    """Write named float32 tensors in dict order (deterministic bytes)."""
    with open(Path(path), "wb") as f:
        f.write(MAGIC)
        f.write(_U32.pack(VERSION))
        f.write(_U32.pack(len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(_U32.pack(len(raw)))
            f.write(raw)
            f.write(_U32.pack(arr.ndim))
            for dim in arr.shape:
                f.write(_U32.pack(dim))
            f.write(arr.tobytes(order="C"))


def read_tensors(path) -> dict:
    buf = Path(path).read_bytes()

    def take(off, n, what):
        if off + n > len(buf):
            raise ExportError(f"{path}: truncated reading {what}")
        return buf[off : off + n], off + n

    chunk, off = take(0, 4, "magic")
    if chunk != MAGIC:
        raise ExportError(f"{path}: bad magic {chunk!r}")
    chunk, off = take(off, 4, "version")
    if _U32.unpack(chunk)[0] != VERSION:
        raise ExportError(f"{path}: unsupported container version")
    chunk, off = take(off, 4, "count")
    count = _U32.unpack(chunk)[0]

    tensors = {}
    for k in range(count):
        chunk, off = take(off, 4, f"name length of tensor {k}")
        chunk, off = take(off, _U32.unpack(chunk)[0], f"name of tensor {k}")
        name = chunk.decode("utf-8")
        chunk, off = take(off, 4, f"rank of {name!r}")
        rank = _U32.unpack(chunk)[0]
        dims = []
        for _ in range(rank):
            chunk, off = take(off, 4, f"dims of {name!r}")
            dims.append(_U32.unpack(chunk)[0])
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        chunk, off = take(off, 4 * size, f"data of {name!r}")
        tensors[name] = np.frombuffer(chunk, dtype="<f4").reshape(dims).astype(np.float32)
    return tensors
