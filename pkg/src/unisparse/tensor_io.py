"""Binary tensor files.

Layout (all little-endian)::

    bytes  0..7   magic  b"USPTENSR"
    bytes  8..11  u32    format version (1)
    bytes 12..15  u32    reserved, zero
    bytes 16..27  u32 x3 H, L, d_k
    bytes 28..    f32    H*L*d_k values, head-major then row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"USPTENSR"
VERSION = 1
_HEADER = struct.Struct("<8sII")
_SHAPE = struct.Struct("<III")
HEADER_SIZE = _HEADER.size + _SHAPE.size


class TensorFormatError(ValueError):
    pass


def encode_tensor(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (H, L, d_k) tensor, got shape {x.shape}")
    H, L, d = x.shape
    payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, 0) + _SHAPE.pack(H, L, d) + payload


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < HEADER_SIZE:
        raise TensorFormatError(
            f"truncated header: {len(buf)} bytes, need {HEADER_SIZE}"
        )
    magic, version, _ = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version} at offset 8")
    H, L, d = _SHAPE.unpack_from(buf, _HEADER.size)
    expected = H * L * d * 4
    got = len(buf) - HEADER_SIZE
    if got != expected:
        raise TensorFormatError(
            f"payload size {got} at offset {HEADER_SIZE} does not match "
            f"header H={H} L={L} d_k={d} ({expected} bytes)"
        )
    data = np.frombuffer(buf, dtype="<f4", offset=HEADER_SIZE).reshape(H, L, d)
    return data.astype(np.float32)


def dump_tensor(path, x: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(x))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def dump_qkv(directory, Q, K, V) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for role, x in (("q", Q), ("k", K), ("v", V)):
        p = directory / f"{role}.bin"
        dump_tensor(p, x)
        paths[role] = p
    return paths


def load_qkv(directory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    directory = Path(directory)
    return tuple(load_tensor(directory / f"{r}.bin") for r in ("q", "k", "v"))
