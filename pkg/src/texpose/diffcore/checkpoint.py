"""Binary checkpoint container for parameter sets.

Layout (all integers little-endian):

    magic    4 bytes   b"TXP1"
    version  uint32    container format version (currently 1)
    count    uint32    number of entries
    entry*:
        name_len   uint16
        name       utf-8 bytes
        trainable  uint8 (0 or 1)
        ndim       uint8
        shape      ndim * uint32
        data       float64 little-endian, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .engine import ParamSet

MAGIC = b"TXP1"
FORMAT_VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(params: ParamSet, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(params)))
        for name in sorted(params.names()):
            raw = name.encode("utf-8")
            value = np.ascontiguousarray(params.value(name), dtype="<f8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", int(params.trainable(name)), value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.tobytes())


def load_checkpoint(path) -> ParamSet:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    params = ParamSet()
    off = 12
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        trainable, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        value = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        params.add(name, value.astype(np.float64), bool(trainable))
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return params
