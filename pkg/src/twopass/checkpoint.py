"""Checkpoint files: named parameter groups of little-endian float64 tensors.

Layout: magic ``DLBK``, u32 version, u32 metadata length, UTF-8 JSON
metadata, u32 group count; per group a u16-prefixed name and u32 tensor
count; per tensor a u16-prefixed name, u32 rank, u32 dims and the data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import FormatError

MAGIC = b"DLBK"
VERSION = 1
GROUPS = ("enc", "rnnt", "delib")


class CheckpointError(FormatError):
    pass


def _name(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(path, groups: dict[str, dict[str, np.ndarray]], meta: dict | None = None) -> None:
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_raw)), meta_raw,
             struct.pack("<I", len(groups))]
    for gname, tensors in groups.items():
        if gname not in GROUPS:
            raise CheckpointError(f"unknown parameter group {gname!r}")
        parts.append(_name(gname))
        parts.append(struct.pack("<I", len(tensors)))
        for tname, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            parts.append(_name(tname))
            parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            parts.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = buf[pos:pos + n]
        pos += n
        return out

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    def name() -> str:
        (n,) = struct.unpack("<H", take(2))
        return take(n).decode("utf-8")

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    meta = json.loads(take(u32()).decode("utf-8"))
    groups: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(u32()):
        gname = name()
        if gname not in GROUPS:
            raise CheckpointError(f"{path}: unknown parameter group {gname!r}")
        tensors = {}
        for _ in range(u32()):
            tname = name()
            ndim = u32()
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            tensors[tname] = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        groups[gname] = tensors
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes")
    return groups, meta


def assign(target: dict, loaded: dict[str, np.ndarray], group: str) -> None:
    """Copy loaded arrays into existing tensors, checking names and shapes."""
    if set(target) != set(loaded):
        missing = sorted(set(target) ^ set(loaded))
        raise CheckpointError(f"group {group!r}: parameter names differ: {missing[:5]}")
    for key, tensor in target.items():
        if tensor.shape != loaded[key].shape:
            raise CheckpointError(
                f"group {group!r}: {key} has shape {loaded[key].shape}, expected {tensor.shape}")
        tensor.data = loaded[key].copy()
