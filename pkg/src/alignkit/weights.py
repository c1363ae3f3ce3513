"""Named-tensor binary container ("ACWT").

Layout, all little-endian:

    magic   4 bytes  b"ACWT"
    version u32      currently 1
    count   u32      number of tensors
    then per tensor:
        name_len u32
        name     UTF-8 bytes
        rank     u32
        dims     u32 * rank
        data     f32 * prod(dims), row-major

The same container holds encoder weights, adapter checkpoints and
precomputed sentence embeddings; only the naming scheme differs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"ACWT"
VERSION = 1

_U32 = struct.Struct("<I")


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors in dict order."""
    path = Path(path)
    with open(path, "wb") as f:
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


def _take(buf: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise FormatError(f"truncated file: expected {n} bytes for {what}")
    return buf[offset : offset + n], offset + n


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read an ACWT file back into {name: float32 array}, insertion-ordered."""
    path = Path(path)
    buf = path.read_bytes()
    chunk, off = _take(buf, 0, 4, "magic")
    if chunk != MAGIC:
        raise FormatError(f"bad magic {chunk!r} in {path} (expected {MAGIC!r})")
    chunk, off = _take(buf, off, 4, "version")
    version = _U32.unpack(chunk)[0]
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} in {path}")
    chunk, off = _take(buf, off, 4, "tensor count")
    count = _U32.unpack(chunk)[0]

    tensors: dict[str, np.ndarray] = {}
    for k in range(count):
        chunk, off = _take(buf, off, 4, f"name length of tensor {k}")
        name_len = _U32.unpack(chunk)[0]
        chunk, off = _take(buf, off, name_len, f"name of tensor {k}")
        try:
            name = chunk.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"tensor {k}: name is not valid UTF-8") from e
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        chunk, off = _take(buf, off, 4, f"rank of {name!r}")
        rank = _U32.unpack(chunk)[0]
        dims = []
        for r in range(rank):
            chunk, off = _take(buf, off, 4, f"dim {r} of {name!r}")
            dims.append(_U32.unpack(chunk)[0])
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        chunk, off = _take(buf, off, 4 * size, f"data of {name!r}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(dims).astype(np.float32)
        tensors[name] = arr
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after last tensor")
    return tensors
