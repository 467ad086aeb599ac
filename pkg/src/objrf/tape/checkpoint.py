"""Versioned binary checkpoint container for named tensors.

Byte layout (all integers little-endian, values little-endian raw):

    magic   4 bytes   b"ORFC"
    version u32       currently 1
    count   u32       number of tensors
    then per tensor, in sorted name order:
        name_len u16
        name     utf-8 bytes
        dtype    u8    0 = float32, 1 = float64
        ndim     u8
        dims     u32 * ndim
        values   raw little-endian array data (C order)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from objrf.tape.tensor import Tensor

MAGIC = b"ORFC"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, Union[np.ndarray, Tensor]]) -> None:
    path = Path(path)
    items = []
    for name in sorted(tensors):
        arr = tensors[name]
        if isinstance(arr, Tensor):
            arr = arr.data
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        items.append((name, arr))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    out: Dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", f.read(2))
            if code not in _CODE_DTYPES:
                raise ValueError(f"{path}: tensor {name!r} has unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            dtype = _CODE_DTYPES[code]
            n = int(np.prod(shape)) if ndim else 1
            raw = f.read(n * dtype.itemsize)
            if len(raw) != n * dtype.itemsize:
                raise ValueError(f"{path}: truncated data for tensor {name!r}")
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
            out[name] = arr.astype(dtype.newbyteorder("="))
    return out
