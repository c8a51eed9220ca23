"""LGAC checkpoint files.

Layout: ``b"LGAC"``, u32 format version, then blocks until EOF.  Each block
is u32 name length, UTF-8 name, u32 rank, ``rank`` u32 dimensions and the
float32 payload, all little-endian.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"LGAC"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        for name in sorted(state):
            arr = np.asarray(state[name])
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an LGAC checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint format version {version}, this build reads {VERSION}")
    pos, state = 8, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(data):
                raise CheckpointError(f"{path}: truncated block {name!r}")
            state[name] = np.frombuffer(data, "<f4", count, pos).reshape(dims).astype(np.float64)
            pos += 4 * count
    except struct.error:
        raise CheckpointError(f"{path}: truncated header at byte {pos}") from None
    return state


def state_checksum(state: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(np.ascontiguousarray(state[name], dtype=np.float64).tobytes())
    return h.hexdigest()
