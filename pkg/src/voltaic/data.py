"""MNIST IDX loading, a synthetic stand-in dataset, and one-hot targets."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimensionMismatch, TruncatedFile

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise DimensionMismatch(f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.classes)


def _read(path) -> bytes:
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _parse_idx(raw: bytes, magic: int, ndim: int, name) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFile(f"{name}: file shorter than its magic number")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagic(f"{name}: magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedFile(f"{name}: header shorter than {4 + 4 * ndim} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    expected = int(np.prod(dims))
    if len(body) < expected:
        raise TruncatedFile(f"{name}: dims {dims} need {expected} bytes, found {len(body)}")
    if len(body) > expected:
        raise DimensionMismatch(f"{name}: dims {dims} need {expected} bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_mnist_idx(images_path, labels_path, classes: int = 10) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled by exactly 1/255."""
    images = _parse_idx(_read(images_path), IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read(labels_path), LABELS_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DimensionMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(flat, labels.astype(np.int64), classes)


def load_mnist_dir(data_dir, split: str = "train") -> Dataset:
    img, lab = MNIST_FILES[split]
    data_dir = Path(data_dir)
    return load_mnist_idx(data_dir / img, data_dir / lab)


def find_data_dir(explicit=None) -> Path | None:
    """Explicit path, else $VOLTAIC_DATA_DIR; None when neither holds the MNIST files."""
    for cand in (explicit, os.environ.get("VOLTAIC_DATA_DIR")):
        if cand and all(_exists(Path(cand) / f) for f in MNIST_FILES["train"] + MNIST_FILES["test"]):
            return Path(cand)
    return None


def _exists(p: Path) -> bool:
    return p.exists() or Path(str(p) + ".gz").exists()


def write_idx_images(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">I", IMAGES_MAGIC) + struct.pack(">3I", *pixels.shape) + pixels.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">I", LABELS_MAGIC) + struct.pack(">I", labels.size) + labels.tobytes())


def synthetic_blobs(n: int, d: int, classes: int, seed: int = 0, spread: float = 0.08) -> Dataset:
    """Gaussian clusters around random centres in [0.2, 0.8]^d, clipped to [0, 1].

    Labels are assigned round-robin before shuffling, so class counts differ by at most one.
    """
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.2, 0.8, size=(classes, d))
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    images = np.clip(centres[labels] + spread * rng.standard_normal((n, d)), 0.0, 1.0)
    return Dataset(images, labels, classes)


def make_targets(labels, classes: int, amplitude: float = 1.0) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = amplitude
    return out
