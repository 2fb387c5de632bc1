"""MDA1 binary checkpoints.

Layout (all integers little-endian uint32)::

    b"MDA1" | version | meta_len | meta (UTF-8 JSON) | n_entries
    n_entries x ( name_len | name (UTF-8) | rank | extents[rank] | float64 LE data )

``meta`` holds the experiment configuration needed to rebuild the network.
Entries cover every parameter and every running-statistics buffer.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MDA1"
VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(state)))
        for name, value in state.items():
            arr = np.ascontiguousarray(value, dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.read(4 * count))
        return vals if count != 1 else vals[0]


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.read(4) != MAGIC:
        raise FormatError(f"{path}: not an MDA1 checkpoint")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(r.read(r.u32()).decode("utf-8"))
    state = {}
    for _ in range(r.u32()):
        name = r.read(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u32(rank)) if rank != 1 else (r.u32(),)
        count = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(r.read(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: trailing bytes after checkpoint")
    return state, meta
