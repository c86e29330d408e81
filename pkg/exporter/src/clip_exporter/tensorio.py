"""Writer for the DEVT binary tensor format consumed by the scoring engine.

Layout (all integers little-endian u32): magic ``DEVT``, version, dtype
code (0 = float32, 1 = uint8), rank, dims, then the raw little-endian
payload. This module only writes; the consumer owns reading/validation.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DEVT"
VERSION = 1
DTYPE_FLOAT32 = 0
DTYPE_UINT8 = 1


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype == np.uint8:
        code, payload = DTYPE_UINT8, arr.tobytes()
    elif np.issubdtype(arr.dtype, np.floating):
        code, payload = DTYPE_FLOAT32, arr.astype("<f4").tobytes()
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}; use float or uint8")
    header = MAGIC + struct.pack("<III", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + payload)
