"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"UPL1"  u32 format_version  u32 tensor_count
    per tensor: u32 name_len, UTF-8 name, u32 rank, rank x u64 extents
    payloads: float64 values of each tensor, in manifest order
    u32 CRC32 of every preceding byte

Model parameters, batch-norm buffers, momentum buffers (``momentum.<name>``)
and metadata all travel as tensors.  Metadata (config echo, RNG state,
epoch) is JSON text whose bytes are stored one per float64 element, so the
file stays a pure tensor container.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"UPL1"
FORMAT_VERSION = 1
META_PREFIX = "meta."
MOMENTUM_PREFIX = "momentum."


class CheckpointError(Exception):
    pass


def encode_json(obj: Any) -> np.ndarray:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def decode_json(arr: np.ndarray) -> Any:
    return json.loads(np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8"))


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    head = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    payload = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        encoded = name.encode("utf-8")
        head.append(struct.pack("<I", len(encoded)))
        head.append(encoded)
        head.append(struct.pack("<I", arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(head + payload)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint corrupt (CRC mismatch)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    pos = 12
    manifest = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            manifest.append((name, shape))
    except struct.error as exc:
        raise CheckpointError(f"checkpoint manifest truncated: {exc}") from None
    expected = pos + sum(8 * int(np.prod(s)) for _, s in manifest)
    if expected != len(body):
        raise CheckpointError(f"checkpoint payload length {len(body) - pos} does not match manifest")
    out = {}
    for name, shape in manifest:
        n = int(np.prod(shape))
        out[name] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    return out


def save(path, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.write_bytes(dumps(tensors))
    return path


def load(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    return loads(path.read_bytes())
