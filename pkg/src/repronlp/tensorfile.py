"""Bit-exact on-disk tensor format (.tns).

Layout, all little-endian: magic ``ZTNS``, u32 version, u8 dtype code
(1 = f32, 2 = i64), u8 rank, rank x u64 extents, then the payload row-major.
The format is fixed-endian so store digests are identical across platforms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ZTNS"
VERSION = 1

_DTYPE_CODE = {"f32": 1, "i64": 2}
_CODE_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<i8")}
_NP_TO_NAME = {np.dtype(np.float32): "f32", np.dtype(np.int64): "i64"}


class TensorFormatError(ValueError):
    """Raised when bytes do not parse as a valid tensor file."""


@dataclass
class IoAudit:
    """Counts every tensor file actually opened by a decode pass."""

    files_opened: list[str] = field(default_factory=list)
    bytes_read: int = 0

    def record(self, path: str, nbytes: int) -> None:
        self.files_opened.append(path)
        self.bytes_read += nbytes

    @property
    def open_count(self) -> int:
        return len(self.files_opened)


def dtype_name(arr: np.ndarray) -> str:
    try:
        return _NP_TO_NAME[arr.dtype]
    except KeyError:
        raise TensorFormatError(f"unsupported tensor dtype {arr.dtype}") from None


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    name = dtype_name(arr)
    if not arr.flags["C_CONTIGUOUS"]:
        # ascontiguousarray would promote 0-d arrays to 1-d; 0-d is already contiguous
        arr = np.ascontiguousarray(arr)
    header = MAGIC + struct.pack("<I", VERSION)
    header += struct.pack("<BB", _DTYPE_CODE[name], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(_CODE_DTYPE[_DTYPE_CODE[name]], copy=False).tobytes()
    return header + payload


def tensor_from_bytes(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor starting at ``offset``; returns (array, next offset)."""
    base = offset
    if data[base : base + 4] != MAGIC:
        raise TensorFormatError("bad magic bytes")
    (version,) = struct.unpack_from("<I", data, base + 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported tensor format version {version}")
    code, rank = struct.unpack_from("<BB", data, base + 8)
    if code not in _CODE_DTYPE:
        raise TensorFormatError(f"unknown dtype code {code}")
    extents = struct.unpack_from(f"<{rank}Q", data, base + 10)
    payload_at = base + 10 + 8 * rank
    dtype = _CODE_DTYPE[code]
    count = 1
    for e in extents:
        count *= e
    nbytes = count * dtype.itemsize
    if payload_at + nbytes > len(data):
        raise TensorFormatError("truncated tensor payload")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=payload_at)
    native = np.dtype(np.float32) if code == 1 else np.dtype(np.int64)
    out = arr.reshape(extents).astype(native, copy=True)
    return out, payload_at + nbytes


def write_tensor(path: Path | str, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path: Path | str, audit: IoAudit | None = None) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if audit is not None:
        audit.record(str(path), len(data))
    try:
        arr, end = tensor_from_bytes(data)
    except TensorFormatError as exc:
        raise TensorFormatError(f"{path}: {exc}") from None
    if end != len(data):
        raise TensorFormatError(f"{path}: {len(data) - end} trailing bytes")
    arr.flags.writeable = False
    return arr
