"""Bit-exact binary checkpoint format.

Layout:

    magic "IAEILM01"
    u32 tensor count
    per tensor (sorted by name):
        u16 name length | UTF-8 name | u8 dtype tag (0 = f32) | u8 rank
        | rank * u32 dims | little-endian payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"IAEILM01"
DTYPE_F32 = 0


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: dict[str, torch.Tensor]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(state))]
    for name in sorted(state):
        tensor = state[name].detach().cpu()
        if tensor.dtype != torch.float32:
            raise CheckpointError(f"{name}: only f32 tensors are storable, got {tensor.dtype}")
        raw = name.encode("utf-8")
        dims = tensor.shape
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", DTYPE_F32, len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims))
        chunks.append(np.ascontiguousarray(tensor.numpy(), dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, torch.Tensor]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    state = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        dtype_tag, rank = struct.unpack_from("<BB", data, off)
        off += 2
        if dtype_tag != DTYPE_F32:
            raise CheckpointError(f"{name}: unknown dtype tag {dtype_tag}")
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims).copy()
        off += 4 * n
        state[name] = torch.from_numpy(arr)
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes in {path}")
    return state
