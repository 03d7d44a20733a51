"""Binary named-tensor container shared by checkpoints and dataset files.

Layout (little-endian): magic ``TANCKPT1``; u32 version (=1); u32 entry count;
then per entry: u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
prod(dims) x f32 values.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"TANCKPT1"
VERSION = 1


class CheckpointError(Exception):
    """Base class for container/checkpoint problems."""


class FormatError(CheckpointError):
    """Bad magic, unsupported version, or a truncated/corrupt body."""


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        if arr.ndim > 0xFF:
            raise ValueError(f"{name}: too many dimensions")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    """Parse a whole container; raises ``FormatError`` without partial results."""
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{source}: bad magic (expected {MAGIC!r})")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{source}: truncated at byte {pos} (needed {n} more)")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} (expected {VERSION})")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{source}: entry {i} name is not UTF-8") from e
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        vals = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        if name in out:
            raise FormatError(f"{source}: duplicate entry {name!r}")
        out[name] = vals.astype(np.float32)
    if pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - pos} trailing bytes after {count} entries")
    return out


def entry_size(name: str, shape) -> int:
    """Bytes one entry occupies in the container."""
    return 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape) + 4 * int(np.prod(shape, dtype=np.int64))


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    data = encode(tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return decode(f.read(), str(path))
