"""Checkpoint directories: ``manifest.json`` plus one little-endian ``params.bin``."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .backbone import ModelConfig, SepViT
from .errors import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

FORMAT = "sepvit-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"


def save(model: SepViT, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(path / BLOB, "wb") as fh:
        for name, p in model.named_parameters():
            raw = p.data.astype(p.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
            fh.write(raw)
            entries.append(
                {"name": name, "shape": list(p.shape), "dtype": p.dtype.name, "offset": offset, "nbytes": len(raw)}
            )
            offset += len(raw)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": model.dtype.name,
        "config": model.config.to_dict(),
        "params": entries,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | os.PathLike) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CheckpointError(f"no checkpoint manifest at {path / MANIFEST}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path / MANIFEST}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint {manifest.get('format')!r} version {manifest.get('version')!r}; expected {FORMAT} v{VERSION}"
        )
    return manifest


def load(path: str | os.PathLike) -> SepViT:
    """Rebuild the model from the manifest's config and fill in every tensor bit-exactly."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing parameter blob {path / BLOB}") from exc

    entries = manifest["params"]
    expected_len = 0
    for e in entries:
        itemsize = np.dtype(e["dtype"]).itemsize
        if int(np.prod(e["shape"], dtype=np.int64)) * itemsize != e["nbytes"]:
            raise CheckpointShapeError(f"{e['name']}: shape {e['shape']} does not match {e['nbytes']} bytes")
        expected_len = max(expected_len, e["offset"] + e["nbytes"])
    if len(blob) < expected_len:
        raise CheckpointTruncatedError(f"{path / BLOB} holds {len(blob)} bytes, manifest needs {expected_len}")
    if len(blob) > expected_len:
        raise CheckpointShapeError(f"{path / BLOB} has {len(blob) - expected_len} trailing bytes")

    model = SepViT(ModelConfig.from_dict(manifest["config"]), dtype=manifest["dtype"])
    params = dict(model.named_parameters())
    if set(params) != {e["name"] for e in entries}:
        missing = sorted(set(params) ^ {e["name"] for e in entries})
        raise CheckpointShapeError(f"parameter names differ from the model built from the manifest config: {missing[:5]}")
    for e in entries:
        p = params[e["name"]]
        if tuple(e["shape"]) != p.shape:
            raise CheckpointShapeError(f"{e['name']}: manifest shape {tuple(e['shape'])} != model shape {p.shape}")
        arr = np.frombuffer(blob, dtype=np.dtype(e["dtype"]).newbyteorder("<"), count=p.size, offset=e["offset"])
        p.data[...] = arr.reshape(p.shape)
    return model
