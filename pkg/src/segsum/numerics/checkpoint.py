"""Versioned binary checkpoint format.

Layout (all integers little-endian):

    8 bytes   magic  b"SGSMCKPT"
    u32       format version (currently 1)
    u32       config JSON byte length, then that many UTF-8 bytes
    u32       number of tensors
    per tensor:
        u16       name byte length, then UTF-8 name
        u8        dtype code (4 = float32, 8 = float64)
        u8        ndim, then ndim * u32 dims
        raw little-endian values, C order

Writes are whole-file atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import Sequence

import numpy as np

MAGIC = b"SGSMCKPT"
VERSION = 1

_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def save_checkpoint(path: str, config: dict, tensors: Sequence[tuple[str, np.ndarray]]) -> None:
    config_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<I", len(config_bytes)))
    parts.append(config_bytes)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float32:
            code = 4
        elif arr.dtype == np.float64:
            code = 8
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(_DTYPE_CODES[code], copy=False).tobytes(order="C"))
    _atomic_write(path, b"".join(parts))


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"truncated checkpoint {path!r}")
        out = blob[off : off + n]
        off += n
        return out

    if take(8) != MAGIC:
        raise CheckpointError(f"{path!r} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(cfg_len).decode("utf-8"))
    (n_tensors,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"unknown dtype code {code} for tensor {name!r}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        dtype = _DTYPE_CODES[code]
        raw = take(count * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if off != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint {path!r}")
    return config, tensors


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
