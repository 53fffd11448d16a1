"""Datasets: the 2-class toy point cloud, an offline 3-class shapes image
corpus, and an IDX (MNIST-format) reader/writer."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConsistencyError, DomainError, FormatError
from .tensor import Tensor

__all__ = [
    "Dataset",
    "gen_toy_dataset",
    "gen_shapes_dataset",
    "load_idx_dataset",
    "save_idx_images",
    "save_idx_labels",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    kind: str                     # "toy2d" | "shapes" | "idx_images"
    samples: list
    labels: list
    split: str = "train"
    num_classes: int = 2

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.samples)} samples but {len(self.labels)} labels")
        for y in self.labels:
            if not 0 <= y < self.num_classes:
                raise DomainError(f"label {y} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([s.data for s in self.samples])
        y = np.asarray(self.labels, dtype=np.int64)
        return x, y

    def subset(self, indices) -> "Dataset":
        return Dataset(self.kind, [self.samples[i] for i in indices],
                       [self.labels[i] for i in indices], self.split, self.num_classes)


def gen_toy_dataset(n_per_class: int, seed: int, split: str = "train",
                    blob_sigma: float = 0.05, ring_radius: float = 0.35,
                    ring_sigma: float = 0.02) -> Dataset:
    """Two separable 2-D classes in the unit square: a central blob
    (class 0) inside a concentric ring (class 1)."""
    if n_per_class < 1:
        raise DomainError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    center = np.array([0.5, 0.5])
    blob = center + rng.standard_normal((n_per_class, 2)) * blob_sigma
    angles = rng.uniform(0.0, 2.0 * np.pi, n_per_class)
    radii = ring_radius + rng.standard_normal(n_per_class) * ring_sigma
    ring = center + np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    pts = np.clip(np.concatenate([blob, ring]), 0.0, 1.0)
    labels = [0] * n_per_class + [1] * n_per_class
    return Dataset("toy2d", [Tensor(p) for p in pts], labels, split, num_classes=2)


def _shape_mask(kind: int, size: int, cx: float, cy: float, a: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == 0:                                   # filled square
        return (np.abs(xx - cx) <= a) & (np.abs(yy - cy) <= a)
    if kind == 1:                                   # filled circle
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= a ** 2
    half_width = (yy - (cy - a)) / 2.0              # upright filled triangle
    return (yy >= cy - a) & (yy <= cy + a) & (np.abs(xx - cx) <= half_width)


def _box_blur(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            out += padded[di:di + img.shape[0], dj:dj + img.shape[1]]
    return out / 9.0


def gen_shapes_dataset(n: int, size: int, seed: int, split: str = "train") -> Dataset:
    """Grayscale squares/circles/triangles at random positions and scales on
    a noisy background, axis-aligned so the classes are orientation-sensitive."""
    if size < 16:
        raise DomainError(f"image size must be >= 16, got {size}")
    if n < 1:
        raise DomainError("need at least one image")
    rng = np.random.default_rng(seed)
    samples, labels = [], []
    for i in range(n):
        kind = i % 3
        cx = rng.uniform(0.35, 0.65) * size
        cy = rng.uniform(0.35, 0.65) * size
        a = rng.uniform(0.18, 0.30) * size
        img = rng.uniform(0.0, 0.25, (size, size))
        mask = _shape_mask(kind, size, cx, cy, a)
        img[mask] = rng.uniform(0.55, 0.85) + rng.standard_normal(mask.sum()) * 0.05
        img = np.clip(_box_blur(img), 0.0, 1.0)
        samples.append(Tensor(img[None]))
        labels.append(kind)
    return Dataset("shapes", samples, labels, split, num_classes=3)


def _read_exact(f, n: int, path: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated at offset {f.tell() - len(data)}, "
                          f"wanted {n} bytes, got {len(data)}")
    return data


def load_idx_dataset(images_path: str, labels_path: str, limit: Optional[int] = None,
                     split: str = "train") -> Dataset:
    """Read big-endian IDX image/label files, scaling pixels to [0, 1]."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad magic 0x{magic:08x} at offset 0, "
                              f"expected 0x{IDX_IMAGES_MAGIC:08x}")
        take = count if limit is None else min(limit, count)
        raw = _read_exact(f, take * rows * cols, images_path)
        images = np.frombuffer(raw, dtype=np.uint8).reshape(take, rows, cols)
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad magic 0x{magic:08x} at offset 0, "
                              f"expected 0x{IDX_LABELS_MAGIC:08x}")
        if label_count != count:
            raise ConsistencyError(
                f"{count} images in {images_path} but {label_count} labels in {labels_path}")
        labels = np.frombuffer(_read_exact(f, take, labels_path), dtype=np.uint8)
    samples = [Tensor(img[None].astype(np.float64) / 255.0) for img in images]
    num_classes = int(labels.max()) + 1 if take else 1
    return Dataset("idx_images", samples, [int(y) for y in labels], split, num_classes)


def save_idx_images(path: str, images: np.ndarray) -> None:
    """Write (N, H, W) uint8 images as a big-endian IDX file."""
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())


def save_idx_labels(path: str, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
