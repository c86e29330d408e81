"""Binary tensor container for embeddings, masks, and score maps.

Layout, all little-endian: 4-byte magic ``DEVT``, uint32 version, uint32
dtype code (0 = float32, 1 = uint8), uint32 rank, ``rank`` uint32 dims,
then the row-major payload. Files written on any platform read back
bit-identically.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DEVT"
VERSION = 1

DTYPE_FLOAT32 = 0
DTYPE_UINT8 = 1

_NP_DTYPES = {DTYPE_FLOAT32: np.dtype("<f4"), DTYPE_UINT8: np.dtype("u1")}


class TensorFileError(ValueError):
    """Malformed tensor file or unsupported array."""


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write ``array`` to ``path``. Floats are stored as float32."""
    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = np.ascontiguousarray(arr, dtype="<f4")
        code = DTYPE_FLOAT32
    elif arr.dtype == np.uint8:
        arr = np.ascontiguousarray(arr)
        code = DTYPE_UINT8
    else:
        raise TensorFileError(f"unsupported dtype {arr.dtype} for {path}")
    if arr.ndim < 1:
        raise TensorFileError(f"rank-0 tensor not supported for {path}")
    header = MAGIC + struct.pack("<III", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor file, validating magic, version, and payload length."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing tensor file: {path}")
    raw = path.read_bytes()
    if len(raw) < 16:
        raise TensorFileError(f"{path}: file shorter than fixed header")
    if raw[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, code, rank = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    if code not in _NP_DTYPES:
        raise TensorFileError(f"{path}: unknown dtype code {code}")
    if len(raw) < 16 + 4 * rank:
        raise TensorFileError(f"{path}: truncated dims header")
    dims = struct.unpack_from(f"<{rank}I", raw, 16)
    dtype = _NP_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[16 + 4 * rank:]
    if len(payload) != expected:
        raise TensorFileError(
            f"{path}: payload length {len(payload)} does not match "
            f"dims {dims} ({expected} bytes expected)"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
