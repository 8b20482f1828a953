"""Single-file checkpoint format with a bit-exact round trip.

Layout: 4-byte magic, little-endian uint64 manifest length, JSON manifest
(format version, architecture, config, ordered parameter names/shapes), then
each parameter's float64 little-endian bytes concatenated in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from ..validation import DataFormatError
from .config import ModelConfig, ModelParams, parameter_manifest

MAGIC = b"KTCK"
FORMAT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "architecture": params.architecture,
        "config": asdict(params.config),
        "parameters": [
            {"name": name, "shape": list(tensor.data.shape)}
            for name, tensor in params.tensors.items()
        ],
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<Q", len(header)))
        handle.write(header)
        for tensor in params.tensors.values():
            handle.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[4:12])
    try:
        manifest = json.loads(raw[12:12 + header_len])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt checkpoint manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported checkpoint format version {manifest.get('format_version')}"
        )
    config = ModelConfig(**manifest["config"])
    expected = [(name, shape) for name, shape, _ in parameter_manifest(config)]
    declared = [(e["name"], tuple(e["shape"])) for e in manifest["parameters"]]
    if declared != expected:
        raise DataFormatError(
            f"{path}: parameter table does not match architecture "
            f"{manifest['architecture']!r} at this config"
        )
    tensors: dict[str, Tensor] = {}
    offset = 12 + header_len
    for name, shape in declared:
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8
        chunk = raw[offset:offset + n_bytes]
        if len(chunk) != n_bytes:
            raise DataFormatError(f"{path}: truncated checkpoint at parameter {name!r}")
        offset += n_bytes
        data = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        tensors[name] = Tensor(data, name=name)
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return ModelParams(manifest["architecture"], config, tensors)
