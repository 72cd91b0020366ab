"""Flat binary parameter checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"FTLK"
    version u32      currently 1
    count   u32      number of entries
    entry*  u32 name length, UTF-8 name, u32 rank, u64 dims..., f64 values...

Entries are written sorted by name so identical parameter sets always produce
identical bytes.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import StorageError

MAGIC = b"FTLK"
VERSION = 1


def save_checkpoint(path, params: dict) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        value = params[name]
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise StorageError(f"{path} is not a parameter checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise StorageError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    offset = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, offset)
            offset += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(dims)
            offset += 8 * n
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise StorageError(f"{path}: truncated or corrupt checkpoint: {exc}") from exc
    if offset != len(blob):
        raise StorageError(f"{path}: {len(blob) - offset} trailing bytes after last entry")
    return out


def restore_into(params: dict[str, Tensor], state: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into an existing parameter map, shape-checked."""
    missing = sorted(set(params) - set(state))
    extra = sorted(set(state) - set(params))
    if missing or extra:
        raise StorageError(f"checkpoint does not match model: missing={missing} extra={extra}")
    for name, tensor in params.items():
        if tuple(state[name].shape) != tensor.shape:
            raise StorageError(f"checkpoint entry {name} has shape {state[name].shape}, expected {tensor.shape}")
        tensor.data = state[name].copy()


def parameter_hash(params: dict) -> str:
    """SHA-256 over the canonical serialized form of a parameter map."""
    digest = hashlib.sha256()
    for name in sorted(params):
        value = params[name]
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()
