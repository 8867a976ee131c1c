"""Seeded synthetic image-classification data (a desk-scale stand-in for ImageNet).

Each class owns a fixed archetype built from a few random 2-D sinusoids per
channel; samples add per-sample amplitude jitter and Gaussian noise.

On disk a dataset is a directory with ``meta.json``, ``images.bin``
(float32, little-endian, shape ``[n, 3, R, R]``) and ``labels.bin``
(int32, little-endian).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Rng

FORMAT_VERSION = 1


@dataclass
class SyntheticDataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    resolution: int
    seed: int

    def __len__(self):
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _archetypes(rng: Rng, K: int, R: int, waves: int = 3) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(R) / R, np.arange(R) / R, indexing="ij")
    out = np.zeros((K, 3, R, R))
    for k in range(K):
        for c in range(3):
            freq = 1 + np.floor(rng.random((waves, 2)) * 6)
            phase = rng.uniform(waves, 0.0, 2 * np.pi)
            amp = rng.uniform(waves, 0.5, 1.0)
            for f, p, a in zip(freq, phase, amp):
                out[k, c] += a * np.sin(2 * np.pi * (f[0] * yy + f[1] * xx) + p)
    return out / np.sqrt(waves)


def generate(seed: int, num_classes: int, n: int, resolution: int, noise: float = 0.5) -> SyntheticDataset:
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if n < num_classes:
        raise ConfigError(f"n={n} samples cannot cover {num_classes} classes")
    rng = Rng(seed)
    protos = _archetypes(rng.fork(), num_classes, resolution)
    labels = (np.arange(n) % num_classes)[rng.permutation(n)]
    gain = rng.uniform((n, 1, 1, 1), 0.8, 1.2)
    images = protos[labels] * gain + noise * rng.normal((n, 3, resolution, resolution))
    return SyntheticDataset(images.astype(np.float32), labels.astype(np.int64), num_classes, resolution, seed)


def save_dataset(ds: SyntheticDataset, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "n": len(ds),
        "K": ds.num_classes,
        "R": ds.resolution,
        "seed": ds.seed,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (path / "images.bin").write_bytes(ds.images.astype("<f4").tobytes())
    (path / "labels.bin").write_bytes(ds.labels.astype("<i4").tobytes())
    return path


def load_dataset(path: str | os.PathLike) -> SyntheticDataset:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        images = np.frombuffer((path / "images.bin").read_bytes(), dtype="<f4")
        labels = np.frombuffer((path / "labels.bin").read_bytes(), dtype="<i4")
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"dataset file missing: {exc.filename}") from exc
    n, K, R = meta["n"], meta["K"], meta["R"]
    if images.size != n * 3 * R * R or labels.size != n:
        raise ShapeError(f"dataset at {path} does not match meta (n={n}, R={R})")
    return SyntheticDataset(
        images.reshape(n, 3, R, R).astype(np.float32), labels.astype(np.int64), K, R, meta.get("seed", -1)
    )
