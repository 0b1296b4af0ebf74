"""Flat binary weight checkpoints.

Layout: magic "FNCE", format version (u32 LE), then named tensors until
EOF. Each tensor is name length (u32 LE), UTF-8 name, rank (u32 LE), one
u64 LE per dimension, then the float64 LE payload in C order. Scalars
(hyperparameters) are rank-0 tensors with a single float.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["MAGIC", "VERSION", "save_checkpoint", "load_checkpoint"]

MAGIC = b"FNCE"
VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, value in state.items():
            arr = np.asarray(value, dtype=np.float64)
            if arr.ndim:
                arr = np.ascontiguousarray(arr)  # keeps rank-0 scalars rank-0
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise DataError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    state: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise DataError("checkpoint truncated while reading a name length")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"{name} rank"))
            dims = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, f"{name} dims"))[0]
                for _ in range(rank)
            )
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(fh, 8 * count, f"{name} data")
            arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
            state[name] = arr.reshape(dims) if rank else arr.reshape(())
    return state
