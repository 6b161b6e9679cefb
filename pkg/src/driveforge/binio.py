"""Binary containers for embedding sets and dense matrices.

Embedding container layout (little-endian):
    magic "EMB1" (4 bytes), u32 dim, u32 count,
    then per entry: u16 id length, UTF-8 id bytes, dim x f32.

Matrix container layout (little-endian):
    magic "MAT1" (4 bytes), u32 rows, u32 cols, row-major f32.

Readers verify the magic and reject trailing bytes so corrupted or
concatenated files fail loudly.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError, IoFailure

EMB_MAGIC = b"EMB1"
MAT_MAGIC = b"MAT1"

_HEADER = struct.Struct("<4sII")
_IDLEN = struct.Struct("<H")


def write_embeddings(path: str | Path, dim: int, entries: Iterable[tuple[str, np.ndarray]]) -> int:
    """Write (id, vector) pairs to an embedding container; returns the count."""
    blobs: list[bytes] = []
    for entry_id, vec in entries:
        arr = np.asarray(vec, dtype="<f4")
        if arr.ndim != 1 or arr.shape[0] != dim:
            raise FormatError(f"vector for {entry_id!r} has shape {arr.shape}, want ({dim},)")
        raw_id = entry_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise FormatError(f"id {entry_id[:32]!r}... is {len(raw_id)} bytes, max 65535")
        blobs.append(_IDLEN.pack(len(raw_id)) + raw_id + arr.tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(EMB_MAGIC, dim, len(blobs)))
            for blob in blobs:
                fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return len(blobs)


def read_embeddings(path: str | Path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    """Read an embedding container; returns (dim, [(id, float32 vector), ...])."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, dim, count = _HEADER.unpack_from(data, 0)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    offset = _HEADER.size
    entries: list[tuple[str, np.ndarray]] = []
    for i in range(count):
        if offset + _IDLEN.size > len(data):
            raise FormatError(f"{path}: truncated at entry {i}")
        (id_len,) = _IDLEN.unpack_from(data, offset)
        offset += _IDLEN.size
        raw_id = data[offset : offset + id_len]
        if len(raw_id) != id_len:
            raise FormatError(f"{path}: truncated id at entry {i}")
        offset += id_len
        vec_bytes = dim * 4
        chunk = data[offset : offset + vec_bytes]
        if len(chunk) != vec_bytes:
            raise FormatError(f"{path}: truncated vector at entry {i}")
        offset += vec_bytes
        entries.append((raw_id.decode("utf-8"), np.frombuffer(chunk, dtype="<f4").copy()))
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return dim, entries


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if arr.ndim != 2:
        raise FormatError(f"matrix must be 2-d, got shape {arr.shape}")
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAT_MAGIC, arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_matrix(path: str | Path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(data, 0)
    if magic != MAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size :]
    expected = rows * cols * 4
    if len(body) < expected:
        raise FormatError(f"{path}: truncated body ({len(body)} < {expected} bytes)")
    if len(body) > expected:
        raise FormatError(f"{path}: {len(body) - expected} trailing bytes")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()
