"""Bit-exact model checkpoints.

Layout (all integers little-endian)::

    b"PSZCKPT1" | u32 version | u32 metadata length | metadata (JSON, UTF-8)
    | float64 weight blobs, layer by layer in spec order | u32 CRC-32 of all prior bytes

The metadata records the architecture tag, input shape, layer specs, the
weight names and shapes in blob order, and training provenance.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    ArchitectureMismatchError,
    ChecksumError,
    CheckpointVersionError,
    NotACheckpointError,
    TruncatedCheckpointError,
)
from .layers import LayerSpec, LayerWeights, Model

MAGIC = b"PSZCKPT1"
VERSION = 1
_U32 = struct.Struct("<I")


def checkpoint_bytes(model: Model, provenance: dict | None = None) -> bytes:
    layers = []
    blobs = []
    for spec, w in zip(model.specs, model.weights):
        names = sorted(w.arrays)
        layers.append({**spec.to_dict(), "weights": [[n, list(w.arrays[n].shape)] for n in names]})
        blobs.extend(np.ascontiguousarray(w.arrays[n], dtype="<f8").tobytes() for n in names)
    meta = {
        "architecture": model.architecture,
        "input_shape": list(model.input_shape),
        "layers": layers,
        "provenance": provenance or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + _U32.pack(VERSION) + _U32.pack(len(meta_bytes)) + meta_bytes + b"".join(blobs)
    return body + _U32.pack(zlib.crc32(body))


def save_checkpoint(model: Model, path: str | Path, provenance: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model, provenance))
    return path


def _verify_crc(raw: bytes) -> None:
    (stored,) = _U32.unpack_from(raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != stored:
        raise ChecksumError("checkpoint checksum mismatch")


def parse_checkpoint(raw: bytes, expected_architecture: str | None = None) -> tuple[Model, dict]:
    if len(raw) < len(MAGIC):
        if MAGIC.startswith(raw) and raw:
            raise TruncatedCheckpointError("checkpoint truncated inside the header")
        raise NotACheckpointError("not a checkpoint")
    if raw[: len(MAGIC)] != MAGIC:
        raise NotACheckpointError("not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise TruncatedCheckpointError("checkpoint truncated inside the header")
    (version,) = _U32.unpack_from(raw, 8)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    (meta_len,) = _U32.unpack_from(raw, 12)
    if len(raw) < 16 + meta_len + 4:
        raise TruncatedCheckpointError("checkpoint truncated inside the metadata")
    try:
        meta = json.loads(raw[16 : 16 + meta_len].decode())
        shapes = [[tuple(s) for _, s in layer["weights"]] for layer in meta["layers"]]
    except (ValueError, KeyError, TypeError):
        _verify_crc(raw)
        raise ChecksumError("checkpoint metadata is unreadable") from None
    n_floats = sum(int(np.prod(s)) for layer in shapes for s in layer)
    expected_len = 16 + meta_len + 8 * n_floats + 4
    if len(raw) < expected_len:
        raise TruncatedCheckpointError(f"checkpoint truncated: {len(raw)} of {expected_len} bytes")
    if len(raw) > expected_len:
        raise ChecksumError(f"checkpoint has {len(raw) - expected_len} unexpected trailing bytes")
    _verify_crc(raw)

    if expected_architecture is not None and meta["architecture"] != expected_architecture:
        raise ArchitectureMismatchError(
            f"checkpoint holds a {meta['architecture']} model, expected {expected_architecture}"
        )
    offset = 16 + meta_len
    specs, weights = [], []
    for layer in meta["layers"]:
        specs.append(LayerSpec.from_dict(layer))
        arrays = {}
        for name, shape in layer["weights"]:
            count = int(np.prod(shape))
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
            offset += 8 * count
        weights.append(LayerWeights(arrays))
    model = Model(meta["architecture"], meta["input_shape"], specs, weights)
    return model, meta.get("provenance", {})


def load_checkpoint(path: str | Path, expected_architecture: str | None = None) -> Model:
    model, _ = parse_checkpoint(Path(path).read_bytes(), expected_architecture)
    return model


def load_checkpoint_with_provenance(path: str | Path, expected_architecture: str | None = None) -> tuple[Model, dict]:
    return parse_checkpoint(Path(path).read_bytes(), expected_architecture)
