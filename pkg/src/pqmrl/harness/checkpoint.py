"""Binary checkpoint format.

Layout::

    b"PQM1"
    uint64 little-endian header length
    header: UTF-8 JSON {format_version, config, meta, tensors: [{name, shape}, ...]}
    tensors: float64 little-endian, row-major, in manifest order
    8-byte BLAKE2b digest of everything above
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

MAGIC = b"PQM1"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")
_DIGEST = 8


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_DIGEST).digest()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    manifest = [{"name": name, "shape": list(np.shape(arr))} for name, arr in ckpt.tensors.items()]
    header = json.dumps(
        {"format_version": ckpt.format_version, "config": ckpt.config, "meta": ckpt.meta, "tensors": manifest},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    parts = [MAGIC, _LEN.pack(len(header)), header]
    for arr in ckpt.tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + _digest(body)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC):
        raise CheckpointTruncatedError("file ends before the magic bytes")
    if data[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    if len(data) < 4 + _LEN.size:
        raise CheckpointTruncatedError("file ends inside the header length")
    (hlen,) = _LEN.unpack_from(data, 4)
    hstart = 4 + _LEN.size
    if len(data) < hstart + hlen:
        raise CheckpointTruncatedError("file ends inside the header")
    try:
        header = json.loads(data[hstart:hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    manifest = header["tensors"]
    sizes = [int(np.prod(entry["shape"], dtype=np.int64)) for entry in manifest]
    payload_end = hstart + hlen + 8 * sum(sizes)
    if len(data) < payload_end + _DIGEST:
        raise CheckpointTruncatedError(
            f"file has {len(data)} bytes, manifest requires {payload_end + _DIGEST}")
    if len(data) > payload_end + _DIGEST:
        raise CheckpointShapeError("file is longer than its tensor manifest declares")
    if _digest(data[:payload_end]) != data[payload_end:]:
        raise CheckpointChecksumError("checksum mismatch")
    tensors = {}
    offset = hstart + hlen
    for entry, size in zip(manifest, sizes):
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=offset).astype(np.float64)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
        offset += 8 * size
    ckpt = Checkpoint(header["config"], tensors, header.get("meta", {}), version)
    _check_declared_shapes(ckpt)
    return ckpt


def _check_declared_shapes(ckpt: Checkpoint):
    """Networks declare their layer sizes in ``meta["networks"]``; tensors must agree."""
    for role, info in ckpt.meta.get("networks", {}).items():
        sizes = info["layer_sizes"]
        for l in range(len(sizes) - 1):
            expected = {f"{role}.W{l}": [sizes[l + 1], sizes[l]], f"{role}.b{l}": [sizes[l + 1]]}
            for name, shape in expected.items():
                if name not in ckpt.tensors:
                    raise CheckpointShapeError(f"tensor {name} missing from checkpoint")
                if list(ckpt.tensors[name].shape) != shape:
                    raise CheckpointShapeError(
                        f"tensor {name} has shape {list(ckpt.tensors[name].shape)}, metadata declares {shape}")


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
    return decode_checkpoint(data)
