"""Binary parameter checkpoint format.

Layout: the magic string "MDETR1", then for each parameter in order:
name length (u32 LE), name bytes (utf-8), rank (u32 LE), one extent per
axis (u32 LE each), then the raw values as little-endian float64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .optim import ParamStore

MAGIC = b"MDETR1"


class CheckpointError(ValueError):
    pass


def save_params(store: ParamStore, path) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, p in store.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            arr = np.ascontiguousarray(p.data, dtype="<f8")
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint reading {what}: expected {n} bytes, got {len(buf)}")
    return buf


def load_param_arrays(path) -> dict[str, np.ndarray]:
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic: {magic!r}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint reading name length")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len, "parameter name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, f"rank of {name}"))
            shape = tuple(
                struct.unpack("<I", _read_exact(f, 4, f"extent of {name}"))[0] for _ in range(rank)
            )
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(f, count * 8, f"values of {name}")
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
            if name in out:
                raise CheckpointError(f"duplicate parameter in checkpoint: {name}")
            out[name] = arr
    return out


def load_params(store: ParamStore, path) -> None:
    """Load a checkpoint into an existing store; validates names and shapes."""
    arrays = load_param_arrays(path)
    try:
        store.load_state_dict(arrays)
    except ValueError as e:
        raise CheckpointError(str(e)) from e
