"""CBTF: a minimal little-endian binary tensor container.

Layout::

    magic   4 bytes   b"CBTF"
    version u16       1
    dtype   u8        1 = float32, 2 = float64
    rank    u8
    extents u64 * rank
    payload raw little-endian scalars, row-major

A 0-d array is written as shape ``(1,)``.
"""
from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CBTF"
VERSION = 1
DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}
CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class FormatError(ValueError):
    """File is not a well-formed CBTF container."""


def header_size(rank: int) -> int:
    return 4 + 2 + 1 + 1 + 8 * rank


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in DTYPE_CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}; CBTF stores float32 or float64")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    code = DTYPE_CODES[arr.dtype]
    head = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes()


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}")
    version, code, rank = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if code not in CODE_DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}")
    hs = header_size(rank)
    if len(buf) < hs:
        raise FormatError(f"{source}: truncated header ({len(buf)} < {hs} bytes)")
    shape = struct.unpack_from(f"<{rank}Q", buf, 8)
    dtype = CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = len(buf) - hs
    if actual != expected:
        raise FormatError(f"{source}: payload is {actual} bytes, extents {tuple(shape)} need {expected}")
    arr = np.frombuffer(buf, dtype=dtype, offset=hs).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_tensor_file(arr: np.ndarray, path) -> dict:
    """Write ``arr`` to ``path``; returns ``{offset, nbytes, sha256}`` for the manifest."""
    path = Path(path)
    blob = encode(arr)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write tensor file {path}: {exc}") from exc
    rank = max(np.asarray(arr).ndim, 1)
    return {"offset": header_size(rank), "nbytes": len(blob) - header_size(rank),
            "sha256": hashlib.sha256(blob).hexdigest()}


def read_tensor_file(path) -> np.ndarray:
    path = Path(path)
    return decode(path.read_bytes(), str(path))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
