"""Binary checkpoint container for named float32 tensors.

Layout (little-endian): 8-byte magic ``FSMCPOSE``, u32 version (=1),
u32 tensor count, then per tensor: u16 name length, UTF-8 name, u8 rank,
u32 extents, raw f32 data.  Write and read round-trip bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["MAGIC", "VERSION", "save_tensors", "load_tensors", "CheckpointError"]

MAGIC = b"FSMCPOSE"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_tensors(path, tensors):
    """Write an ordered mapping of name -> numpy array as float32."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype=np.float32)
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name!r}")
            if data.ndim > 0xFF:
                raise CheckpointError(f"tensor rank {data.ndim} exceeds format limit")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_tensors(path):
    """Read a checkpoint back into an ordered name -> float32 array dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 16
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        numel = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=numel, offset=offset).reshape(shape)
        offset += 4 * numel
        out[name] = arr.copy()
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return out
