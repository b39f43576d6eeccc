"""Flat binary tensor container: magic, rank, dims, float32 payload.

Layout (all integers little-endian):

    offset  size      field
    0       8         magic b"RZRQTNSR"
    8       4         rank, u32
    12      8 * rank  dims, u64 each
    ...     4 * prod  data, float32 LE, C order

The payload length must match the dims exactly; short or oversized files
are rejected, as are non-finite entries in either direction.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

__all__ = ["TENSOR_MAGIC", "save_tensor", "load_tensor", "load_matrix", "atomic_write_bytes"]

TENSOR_MAGIC = b"RZRQTNSR"
_MAX_RANK = 8


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write bytes to path via a same-directory temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    """Serialize an array as a float32 tensor file (atomic write).

    Args:
        path: destination file path.
        array: numeric array, any rank up to 8.  Values must be finite and
            representable in float32.
    """
    arr = np.asarray(array)
    if arr.ndim == 0 or arr.ndim > _MAX_RANK:
        raise ValidationError(f"tensor rank must be in [1, {_MAX_RANK}], got {arr.ndim}")
    data = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise ValidationError("refusing to write non-finite tensor values")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    atomic_write_bytes(path, header + data.tobytes(order="C"))


def load_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor file back as a C-contiguous float32 array."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read tensor file {path}: {exc}") from exc
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:8] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {TENSOR_MAGIC!r}")
    (rank,) = struct.unpack_from("<I", blob, 8)
    if not 1 <= rank <= _MAX_RANK:
        raise FormatError(f"{path}: unsupported rank {rank}")
    if len(blob) < 12 + 8 * rank:
        raise FormatError(f"{path}: truncated dim table")
    dims = struct.unpack_from(f"<{rank}Q", blob, 12)
    count = 1
    for d in dims:
        count *= d
    start = 12 + 8 * rank
    expected = start + 4 * count
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob) - start} bytes, expected {4 * count}")
    data = np.frombuffer(blob, dtype="<f4", offset=start, count=count)
    arr = data.reshape(dims).astype(np.float32, copy=True)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return arr


def load_matrix(path: str | Path) -> np.ndarray:
    """Read a tensor file and require rank 2."""
    arr = load_tensor(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a rank-2 tensor, got rank {arr.ndim}")
    return arr
