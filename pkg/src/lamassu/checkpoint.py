"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LMSU"            magic
    u32                format version
    u32                header length in bytes
    header             UTF-8 JSON: config, vocabulary, train state, manifest
    payload            float32 arrays in manifest order

Each manifest entry is ``[name, dtype_code, shape]``; dtype code 1 means
little-endian float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LMSU"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    manifest = [[name, 1, list(arr.shape)] for name, arr in arrays.items()]
    header = json.dumps({**meta, "manifest": manifest}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for arr in arrays.values():
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    meta = json.loads(blob[12: 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    arrays = {}
    for name, code, shape in meta.pop("manifest"):
        if code not in DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        dtype = DTYPE_CODES[code]
        n = int(np.prod(shape)) if shape else 1
        end = offset + n * dtype.itemsize
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated payload at {name}")
        arrays[name] = np.frombuffer(blob[offset:end], dtype=dtype).reshape(shape).astype(np.float32)
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return arrays, meta
