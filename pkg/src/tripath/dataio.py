"""Dataset I/O: IDX image/label files, triplet assembly, PGM montages.

IDX is the only ingestion format. Byte layout:

* image file: big-endian magic 0x00000803, u32 count/rows/cols, then
  count*rows*cols raw u8 pixels, one image after another, row-major.
* label file: big-endian magic 0x00000801, u32 count, count raw u8 labels.

Pixels are divided by 255 into [0, 1] at load time and quantized back
with round(pixel*255) on write.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numerics import Rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic or truncated payload)."""


@dataclass
class ImageDataset:
    """Images as an N×D matrix in [0, 1] plus integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    width: int
    height: int
    num_classes: int

    def __post_init__(self):
        if self.images.shape[0] != len(self.labels):
            raise ValueError(
                f"image/label count mismatch: {self.images.shape[0]} images "
                f"vs {len(self.labels)} labels"
            )
        if self.images.shape[1] != self.width * self.height:
            raise ValueError(
                f"pixel count {self.images.shape[1]} does not match "
                f"{self.width}x{self.height}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise ValueError(
                f"label {int(self.labels.max())} out of range for "
                f"{self.num_classes} classes"
            )

    @property
    def n(self) -> int:
        return self.images.shape[0]


@dataclass
class TripletDataset:
    """Aligned (clean, noisy, one-hot label) rows for joint training."""

    clean: np.ndarray
    noisy: np.ndarray
    labels_onehot: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        n = self.clean.shape[0]
        if self.noisy.shape[0] != n or self.labels_onehot.shape[0] != n:
            raise ValueError(
                f"triplet row counts differ: clean={n}, noisy={self.noisy.shape[0]}, "
                f"labels={self.labels_onehot.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.clean.shape[0]

    @property
    def num_classes(self) -> int:
        return self.labels_onehot.shape[1]

    def subset(self, idx) -> "TripletDataset":
        return TripletDataset(
            self.clean[idx], self.noisy[idx], self.labels_onehot[idx],
            self.width, self.height,
        )


def read_idx_images(path):
    """Read an IDX image file; returns (N×D matrix in [0,1], width, height)."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise IdxFormatError(f"{path}: truncated header ({len(header)} bytes)")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(
                f"{path}: bad image magic 0x{magic:08X}, expected 0x{IMAGE_MAGIC:08X}"
            )
        payload = f.read(count * rows * cols)
    if len(payload) != count * rows * cols:
        raise IdxFormatError(
            f"{path}: truncated payload, expected {count * rows * cols} bytes, "
            f"got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(count, rows * cols), cols, rows


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) < 8:
            raise IdxFormatError(f"{path}: truncated header ({len(header)} bytes)")
        magic, count = struct.unpack(">II", header)
        if magic != LABEL_MAGIC:
            raise IdxFormatError(
                f"{path}: bad label magic 0x{magic:08X}, expected 0x{LABEL_MAGIC:08X}"
            )
        payload = f.read(count)
    if len(payload) != count:
        raise IdxFormatError(
            f"{path}: truncated payload, expected {count} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def write_idx_images(images: np.ndarray, width: int, height: int, path):
    """Inverse of read_idx_images: quantizes with round(pixel*255)."""
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError("pixels must lie in [0, 1]")
    n = images.shape[0]
    data = np.rint(images * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, height, width))
        f.write(data.tobytes())


def write_idx_labels(labels, path):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("labels must fit in a byte")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def load_image_dataset(images_path, labels_path, num_classes=None,
                       binarize=False) -> ImageDataset:
    """Read matching image and label files into one dataset.

    binarize thresholds pixels at 0.5; by default they stay in [0, 1].
    """
    images, width, height = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(labels) != images.shape[0]:
        raise IdxFormatError(
            f"{images_path} has {images.shape[0]} images but {labels_path} "
            f"has {len(labels)} labels"
        )
    if binarize:
        images = (images >= 0.5).astype(np.float64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 1
    return ImageDataset(images, labels, width, height, num_classes)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    for i, lab in enumerate(labels):
        if not 0 <= lab < num_classes:
            raise ValueError(f"label {lab} at row {i} out of range [0, {num_classes})")
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def make_triplets(clean: ImageDataset, noisy_images: np.ndarray) -> TripletDataset:
    if noisy_images.shape != clean.images.shape:
        raise ValueError(
            f"noisy shape {noisy_images.shape} does not match clean "
            f"{clean.images.shape}"
        )
    return TripletDataset(
        clean.images.copy(), np.asarray(noisy_images, dtype=np.float64).copy(),
        one_hot(clean.labels, clean.num_classes), clean.width, clean.height,
    )


def replicate_dataset(dataset: ImageDataset, factor: int) -> ImageDataset:
    """Each image repeated `factor` times, copies kept adjacent (row i of the
    result is source row i // factor)."""
    if factor < 1:
        raise ValueError("replication factor must be >= 1")
    if factor == 1:
        return dataset
    idx = np.repeat(np.arange(dataset.n), factor)
    return ImageDataset(
        dataset.images[idx].copy(), dataset.labels[idx].copy(),
        dataset.width, dataset.height, dataset.num_classes,
    )


def split(dataset: ImageDataset, train_fraction: float, seed: int):
    """Disjoint shuffled (train, test) partition; deterministic given seed."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = dataset.n
    perm = list(range(n))
    rng = Rng(seed)
    for i in range(n - 1, 0, -1):
        j = rng.randint(0, i)
        perm[i], perm[j] = perm[j], perm[i]
    n_train = int(np.floor(train_fraction * n + 0.5))
    train_idx = np.array(perm[:n_train], dtype=np.int64)
    test_idx = np.array(perm[n_train:], dtype=np.int64)

    def take(idx):
        return ImageDataset(
            dataset.images[idx].copy(), dataset.labels[idx].copy(),
            dataset.width, dataset.height, dataset.num_classes,
        )

    return take(train_idx), take(test_idx)


def write_pgm_montage(images: np.ndarray, width: int, height: int,
                      grid_cols: int, path):
    """Tile images left-to-right, top-to-bottom into a binary PGM (P5).

    Tiles are separated by 1-pixel black lines; unused trailing cells
    stay black.
    """
    n = images.shape[0]
    if n == 0:
        raise ValueError("montage needs at least one image")
    grid_cols = min(grid_cols, n)
    grid_rows = (n + grid_cols - 1) // grid_cols
    out_w = grid_cols * width + (grid_cols - 1)
    out_h = grid_rows * height + (grid_rows - 1)
    canvas = np.zeros((out_h, out_w), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, grid_cols)
        tile = np.rint(images[i].reshape(height, width) * 255.0).astype(np.uint8)
        y0 = r * (height + 1)
        x0 = c * (width + 1)
        canvas[y0:y0 + height, x0:x0 + width] = tile
    with open(path, "wb") as f:
        f.write(f"P5\n{out_w} {out_h}\n255\n".encode("ascii"))
        f.write(canvas.tobytes())
