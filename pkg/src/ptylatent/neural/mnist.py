"""IDX (MNIST) file ingestion."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

SPLITS = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(ValueError):
    pass


def _read(path) -> bytes:
    path = Path(path)
    if not path.exists() and path.with_suffix(path.suffix + ".gz").exists():
        path = path.with_suffix(path.suffix + ".gz")
    data = path.read_bytes()
    return gzip.decompress(data) if data[:2] == b"\x1f\x8b" else data


def read_idx_images(path) -> np.ndarray:
    buf = _read(path)
    if len(buf) < 16:
        raise IdxError(f"{path}: truncated header")
    magic, n, rows, cols = struct.unpack_from(">IIII", buf, 0)
    if magic != IMAGES_MAGIC:
        raise IdxError(f"{path}: bad image magic 0x{magic:08x}")
    if len(buf) != 16 + n * rows * cols:
        raise IdxError(f"{path}: truncated, expected {n * rows * cols} pixel bytes")
    return np.frombuffer(buf, np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = _read(path)
    if len(buf) < 8:
        raise IdxError(f"{path}: truncated header")
    magic, n = struct.unpack_from(">II", buf, 0)
    if magic != LABELS_MAGIC:
        raise IdxError(f"{path}: bad label magic 0x{magic:08x}")
    if len(buf) != 8 + n:
        raise IdxError(f"{path}: truncated, expected {n} labels")
    return np.frombuffer(buf, np.uint8, offset=8).copy()


def pad_images(raw: np.ndarray, size: int = 32, dtype=np.float64) -> np.ndarray:
    """Center ``(n, h, w)`` uint8 images in ``size x size`` zero borders, scaled to [0, 1]."""
    n, h, w = raw.shape
    top, left = (size - h) // 2, (size - w) // 2
    out = np.zeros((n, size, size, 1), dtype=dtype)
    out[:, top:top + h, left:left + w, 0] = raw / 255.0
    return out


def idx_load(images_path, labels_path, size: int = 32, dtype=np.float64):
    """Images as ``(n, size, size, 1)`` in [0, 1] and their labels."""
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(raw) != len(labels):
        raise IdxError(f"{len(raw)} images but {len(labels)} labels")
    return pad_images(raw, size, dtype), labels


def load_split(directory, split: str = "train", **kw):
    img, lab = SPLITS[split]
    d = Path(directory)
    return idx_load(d / img, d / lab, **kw)


def filter_class(images, labels, label: int):
    """Subset of ``(images, labels)`` with the given label, order preserved."""
    keep = np.flatnonzero(np.asarray(labels) == label)
    if len(keep) == 0:
        raise ValueError(f"no samples with label {label}")
    return images[keep], labels[keep]
