"""Versioned binary checkpoint container.

Layout (little-endian)::

    b"F3KCKPT\\0"                      8-byte magic
    u32 version
    u32 metadata length, UTF-8 JSON    model config and training settings
    u32 record count
    per record: u16 name length, name, u8 kind (0 param, 1 buffer),
                u8 ndim, u32 dims..., float64 data
    u32 CRC-32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig
from .params import ParamStore

MAGIC = b"F3KCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint."""


def dumps(model: Model, meta: dict | None = None) -> bytes:
    meta = dict(meta or {})
    meta["model"] = model.config.to_dict()
    mbytes = json.dumps(meta, sort_keys=True).encode()
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(mbytes)) + mbytes
    records = [(n, 0, t.data) for n, t in model.store.params.items()]
    records += [(n, 1, a) for n, a in model.store.buffers.items()]
    out += struct.pack("<I", len(records))
    for name, kind, arr in records:
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", kind, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def loads(buf: bytes) -> tuple[Model, dict]:
    if len(buf) < len(MAGIC) + 16 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    try:
        pos = len(MAGIC)
        version, mlen = struct.unpack_from("<II", body, pos)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos += 8
        meta = json.loads(body[pos : pos + mlen].decode())
        pos += mlen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        store = ParamStore()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nlen].decode()
            pos += nlen
            kind, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
            if kind == 0:
                store.add(name, arr)
            else:
                store.add_buffer(name, arr)
        if pos != len(body):
            raise CheckpointError("trailing bytes after last record")
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {e}") from e
    config = ModelConfig.from_dict(meta.pop("model"))
    return Model(config, store), meta


def save(path, model: Model, meta: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(model, meta))


def load(path) -> tuple[Model, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    return loads(path.read_bytes())
