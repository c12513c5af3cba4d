"""CKPT1 parameter files.

Layout (little-endian): magic ``CKPT1``, then per entry
``u32 name_len, name (utf-8), u32 rank, u64 extent * rank, f64 values``
until end of file.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays):
    """Write a name -> array mapping; values are stored as float64."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in arrays.items():
            a = np.array(arr, dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:5]!r}")
    pos, out = 5, {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(blob):
                raise CheckpointError(f"{path}: truncated entry {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header at byte {pos}") from exc
    return out
