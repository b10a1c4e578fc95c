"""Flat binary checkpoints with bit-exact round trips.

Layout (all integers little-endian):

    magic "ENTD" | version u32 | config-hash 32 raw bytes | seed i64 |
    iteration u64 | record count u32 | records...

Each record: name length u32, utf-8 name, dtype code u8, ndim u8, one u64
per dimension, then the C-order array bytes. Records are written in sorted
name order, so identical contents always produce identical files; that is
what the determinism and resume tests hash.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError

MAGIC = b"ENTD"
VERSION = 1

# dtype codes are part of the format; append, never renumber
_CODE_TO_DTYPE = {
    0: np.dtype("<f8"),
    1: np.dtype("<f4"),
    2: np.dtype("<i8"),
    3: np.dtype("<u1"),  # raw bytes (embedded config JSON)
}
_KIND_TO_CODE = {("f", 8): 0, ("f", 4): 1, ("i", 8): 2, ("u", 1): 3}


@dataclass
class Checkpoint:
    config_hash: str  # hex sha256 of the run config
    seed: int
    iteration: int
    arrays: dict[str, np.ndarray]
    version: int = VERSION


def _dtype_code(a: np.ndarray, name: str) -> int:
    key = (a.dtype.kind, a.dtype.itemsize)
    if key not in _KIND_TO_CODE:
        raise CheckpointError(f"record {name!r} has unsupported dtype {a.dtype}")
    return _KIND_TO_CODE[key]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    try:
        digest = bytes.fromhex(ckpt.config_hash)
    except ValueError:
        digest = b""
    if len(digest) != 32:
        raise CheckpointError("config_hash must be a 64-char hex sha256")
    chunks = [
        MAGIC,
        struct.pack("<I", ckpt.version),
        digest,
        struct.pack("<q", int(ckpt.seed)),
        struct.pack("<Q", int(ckpt.iteration)),
        struct.pack("<I", len(ckpt.arrays)),
    ]
    for name in sorted(ckpt.arrays):
        a = np.asarray(ckpt.arrays[name])
        code = _dtype_code(a, name)
        # astype keeps 0-d arrays 0-d (ascontiguousarray would promote them)
        a = a.astype(_CODE_TO_DTYPE[code], order="C", copy=False)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        chunks.append(a.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            r = _Reader(fh.read())
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from exc
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    config_hash = r.take(32).hex()
    seed = r.unpack("<q")
    iteration = r.unpack("<Q")
    count = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.unpack("<I")).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _CODE_TO_DTYPE:
            raise CheckpointError(f"record {name!r}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        if ndim == 1:
            shape = (shape,)
        dtype = _CODE_TO_DTYPE[code]
        n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.take(n_items * dtype.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return Checkpoint(
        config_hash=config_hash, seed=seed, iteration=iteration,
        arrays=arrays, version=version,
    )
