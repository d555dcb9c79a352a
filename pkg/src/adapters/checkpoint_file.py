"""
SALTCKPT checkpoint files.

Layout (little-endian throughout):
    8 bytes   magic b"SALTCKPT"
    u32       version (1)
    u32       length of the config block, then that many bytes of UTF-8 JSON
              {"lm_config": {...}, "meta": {...}}
    u32       tensor count
    per tensor, sorted by name:
        u32 name length, name bytes (UTF-8), u32 rank, rank x u32 dims,
        prod(dims) float64 values, row-major

Round-trips are bit-exact: values are stored as raw IEEE-754 doubles.
"""

import json
import math
import struct
from dataclasses import asdict

import numpy as np

from src.lm.model import LmConfig, LmModel

MAGIC = b"SALTCKPT"
VERSION = 1


def encode_checkpoint(model: LmModel, meta: dict | None = None) -> bytes:
    block = json.dumps({"lm_config": asdict(model.config), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(block)), block, struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        value = np.ascontiguousarray(model.params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(value.tobytes())
    return b"".join(parts)


class _Reader:

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ValueError(f"SALTCKPT: truncated at byte {self._pos} (wanted {n} more)")
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def done(self) -> bool:
        return self._pos == len(self._data)


def decode_checkpoint(data: bytes) -> tuple[LmModel, dict]:
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise ValueError("SALTCKPT: bad magic")
    (version,) = reader.u32()
    if version != VERSION:
        raise ValueError(f"SALTCKPT: unsupported version {version}")
    (block_len,) = reader.u32()
    block = json.loads(reader.take(block_len).decode("utf-8"))
    config = LmConfig(**block["lm_config"])

    (count,) = reader.u32()
    params = {}
    for _ in range(count):
        (name_len,) = reader.u32()
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.u32()
        dims = reader.u32(rank) if rank else ()
        values = np.frombuffer(reader.take(8 * math.prod(dims)), dtype="<f8")
        params[name] = values.astype(np.float64).reshape(dims)
    if not reader.done():
        raise ValueError("SALTCKPT: trailing bytes after the last tensor")

    expected = config.param_shapes()
    if set(params) != set(expected) or any(params[k].shape != expected[k] for k in expected):
        raise ValueError("SALTCKPT: tensors do not match the shapes implied by the stored config")
    return LmModel(config, params), block.get("meta", {})
