"""Binary tensor container used at every file boundary of the project.

Layout (all little-endian):

    magic   4 bytes  b"MMRT"
    version u32      currently 1
    dtype   u8       0 = float32 (the only defined code)
    ndim    u8
    dims    ndim x u64
    payload row-major float32 values

The payload is written byte-for-byte, so round trips are bit-exact for every
finite float32 including negative zero. Readers are safe for concurrent use;
writers need exclusive access to their target path.
"""

from __future__ import annotations

import io
import struct
from os import PathLike
from pathlib import Path

import numpy as np

MAGIC = b"MMRT"
VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sIBB")


class TensorFormatError(ValueError):
    """Malformed tensor file; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _as_f32(array) -> np.ndarray:
    # ascontiguousarray promotes 0-d scalars to 1-d, so only use it when needed
    arr = np.asarray(array, dtype=np.float32)
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


def write_tensor(path: str | PathLike, array: np.ndarray) -> None:
    """Serialize ``array`` as float32. Writes via a temp file then renames,
    so readers never observe a partial file."""
    arr = _as_f32(array)
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(tensor_bytes(arr))
    tmp.replace(target)


def tensor_bytes(array: np.ndarray) -> bytes:
    arr = _as_f32(array)
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim))
    for dim in arr.shape:
        out.write(struct.pack("<Q", dim))
    out.write(arr.astype("<f4", copy=False).tobytes(order="C"))
    return out.getvalue()


def read_tensor(path: str | PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise TensorFormatError("truncated header", len(blob))
    magic, version, dtype, ndim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TensorFormatError(f"unknown format version {version}", 4)
    if dtype != DTYPE_F32:
        raise TensorFormatError(f"unknown dtype code {dtype}", 8)
    offset = _HEADER.size
    dims_end = offset + 8 * ndim
    if len(blob) < dims_end:
        raise TensorFormatError("truncated dims", offset)
    dims = struct.unpack_from(f"<{ndim}Q", blob, offset) if ndim else ()
    count = 1
    for dim in dims:
        count *= dim
    expected = dims_end + 4 * count
    if len(blob) < expected:
        raise TensorFormatError(
            f"truncated payload: need {expected} bytes, have {len(blob)}", len(blob))
    if len(blob) > expected:
        raise TensorFormatError(f"trailing bytes after payload", expected)
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    return values.reshape(dims).copy()


def tensor_blob_size(blob: bytes, offset: int = 0) -> int:
    """Byte length of the tensor record starting at ``offset`` (for containers)."""
    if len(blob) < offset + _HEADER.size:
        raise TensorFormatError("truncated header", offset)
    magic, version, dtype, ndim = _HEADER.unpack_from(blob, offset)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}", offset)
    dims = struct.unpack_from(f"<{ndim}Q", blob, offset + _HEADER.size) if ndim else ()
    count = 1
    for dim in dims:
        count *= dim
    return _HEADER.size + 8 * ndim + 4 * count
