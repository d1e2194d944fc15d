"""Little-endian binary primitives shared by the on-disk formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Bad magic, unsupported version, truncated payload, or malformed fields."""


def read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def write_header(f: BinaryIO, magic: bytes, version: int) -> None:
    assert len(magic) == 4
    f.write(magic)
    f.write(struct.pack("<I", version))


def read_header(f: BinaryIO, magic: bytes, max_version: int = 1) -> int:
    got = read_exact(f, 4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", read_exact(f, 4))
    if not 1 <= version <= max_version:
        raise FormatError(f"unsupported version {version} for {magic!r}")
    return version


def write_u8(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<B", value))


def read_u8(f: BinaryIO) -> int:
    return struct.unpack("<B", read_exact(f, 1))[0]


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", read_exact(f, 4))[0]


def write_u64(f: BinaryIO, *values: int) -> None:
    f.write(struct.pack(f"<{len(values)}Q", *values))


def read_u64(f: BinaryIO, count: int = 1) -> tuple[int, ...]:
    return struct.unpack(f"<{count}Q", read_exact(f, 8 * count))


def write_f64(f: BinaryIO, value: float) -> None:
    f.write(struct.pack("<d", value))


def read_f64(f: BinaryIO) -> float:
    return struct.unpack("<d", read_exact(f, 8))[0]


def write_array(f: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    f.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes())


def read_array(f: BinaryIO, count: int, dtype: str) -> np.ndarray:
    dt = np.dtype(dtype)
    buf = read_exact(f, count * dt.itemsize)
    return np.frombuffer(buf, dtype=dt).copy()
