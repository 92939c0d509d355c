"""On-disk formats: raw tensor dumps and binary PGM images.

Tensor dump layout (little-endian throughout):
    4 bytes   magic "WAUT"
    1 byte    format version (currently 1)
    1 byte    dtype: 0 = single, 1 = double
    4 x u32   dimensions N, C, H, W (shapes of lower rank pad with leading 1s)
    payload   raw scalars, row-major

PGM output is binary (P5), one byte per pixel, min-max normalized; a
constant map renders as all 128 so "nothing to see" is visually distinct
from "black".
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import ContractError, ShapeError

MAGIC = b"WAUT"
VERSION = 1
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _DTYPE_CODE:
        raise ContractError(f"dump supports float32/float64 only, got {arr.dtype}")
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"dump supports rank 1..4, got shape {arr.shape}")
    dims = (1,) * (4 - arr.ndim) + arr.shape
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", VERSION, _DTYPE_CODE[arr.dtype]))
        f.write(struct.pack("<4I", *dims))
        f.write(np.ascontiguousarray(le).tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 22 or raw[:4] != MAGIC:
        raise ContractError(f"{path}: not a tensor dump (bad magic)")
    version, dcode = struct.unpack("<BB", raw[4:6])
    if version != VERSION:
        raise ContractError(f"{path}: unsupported dump version {version}")
    if dcode not in _CODE_DTYPE:
        raise ContractError(f"{path}: unknown dtype code {dcode}")
    dims = struct.unpack("<4I", raw[6:22])
    dtype = _CODE_DTYPE[dcode]
    count = int(np.prod(dims))
    payload = raw[22:]
    if len(payload) != count * dtype.itemsize:
        raise ContractError(
            f"{path}: payload holds {len(payload)} bytes, header promises "
            f"{count * dtype.itemsize}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return np.ascontiguousarray(arr).astype(dtype.newbyteorder("="))


def write_pgm(path, values: np.ndarray) -> None:
    """Render a 2-D float map as a binary PGM with min-max normalization."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"PGM wants a 2-D map, got shape {values.shape}")
    lo = float(values.min())
    hi = float(values.max())
    if hi > lo:
        pixels = np.rint(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)
    else:
        pixels = np.full(values.shape, 128, dtype=np.uint8)
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
