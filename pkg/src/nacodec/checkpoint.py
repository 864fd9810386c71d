"""Checkpoint container: JSON metadata plus named raw tensors.

Layout (little-endian)::

    magic    4 bytes b"NACP"
    version  u8      currently 1
    meta_len u32, then meta_len bytes of UTF-8 JSON
    n_tensors u32
    per tensor:
        name_len  u16, name bytes (UTF-8; "/"-namespaced, e.g. "codec/...")
        dtype_len u8,  numpy dtype string (e.g. "float32")
        ndim      u8,  then ndim * u32 dimensions
        data      product(dims) * itemsize bytes

Weights for several components live in one file under distinct name
prefixes (for example one discriminator namespace per bandwidth).
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"NACP"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint container."""


def save_checkpoint(path, tensors: dict, metadata: dict = None):
    """Write named arrays (a flat {name: ndarray} mapping) and metadata."""
    meta_bytes = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    out += struct.pack("<I", len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", len(tensors))
    for name, array in tensors.items():
        array = np.asarray(array, order="C")
        name_bytes = name.encode("utf-8")
        dtype_bytes = array.dtype.name.encode("utf-8")
        out += struct.pack("<H", len(name_bytes)) + name_bytes
        out += struct.pack("<B", len(dtype_bytes)) + dtype_bytes
        out += struct.pack("<B", array.ndim)
        out += struct.pack(f"<{array.ndim}I", *array.shape)
        out += array.astype(array.dtype.newbyteorder("<")).tobytes()
    with open(path, "wb") as handle:
        handle.write(bytes(out))


def load_checkpoint(path) -> tuple:
    """Read a checkpoint; returns (metadata dict, {name: ndarray})."""
    with open(path, "rb") as handle:
        data = handle.read()
    if len(data) < 13 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (version,) = struct.unpack_from("<B", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 5
    (meta_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if len(data) < offset + meta_len:
        raise CheckpointError("truncated metadata")
    try:
        metadata = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad metadata block: {exc}") from exc
    offset += meta_len
    if len(data) < offset + 4:
        raise CheckpointError("truncated tensor count")
    (n_tensors,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors = {}
    for _ in range(n_tensors):
        try:
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (dtype_len,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dtype = np.dtype(data[offset : offset + dtype_len].decode("ascii"))
            offset += dtype_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            nbytes = count * dtype.itemsize
            if len(data) < offset + nbytes:
                raise CheckpointError(f"truncated tensor data for {name!r}")
            array = np.frombuffer(
                data, dtype=dtype.newbyteorder("<"), count=count, offset=offset
            ).astype(dtype)
            offset += nbytes
        except (struct.error, TypeError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"malformed tensor record: {exc}") from exc
        tensors[name] = array.reshape(shape)
    return metadata, tensors


def namespaced(prefix: str, state: dict) -> dict:
    """Prefix every state-dict key: {"w": a} -> {"prefix/w": a}."""
    return {f"{prefix}/{name}": value for name, value in state.items()}


def split_namespace(tensors: dict, prefix: str) -> dict:
    """Extract one prefix from a flat mapping, stripping the prefix."""
    lead = f"{prefix}/"
    return {
        name[len(lead):]: value
        for name, value in tensors.items()
        if name.startswith(lead)
    }
