"""Dataset ingestion: IDX image/label files (MNIST family), CIFAR-10 binary
batches, per-channel normalization, deterministic splits and batching.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes

DATASET_SHAPES = {
    "mnist": (1, 28, 28),
    "fashion-mnist": (1, 28, 28),
    "cifar10": (3, 32, 32),
}
# Train-split sizes after the train/val split, used by the FLOPs command
# when no dataset files are available to count.
NOMINAL_TRAIN_SIZE = {"mnist": 48_000, "fashion-mnist": 48_000, "cifar10": 40_000}

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W), float
    labels: np.ndarray  # (N,), int
    class_count: int
    split: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"image count {self.images.shape[0]} does not match "
                f"label count {self.labels.shape[0]}"
            )
        if self.labels.size and self.labels.max() >= self.class_count:
            raise FormatError(
                f"label {self.labels.max()} out of range for "
                f"{self.class_count} classes"
            )

    def __len__(self):
        return self.images.shape[0]


def _read_bytes(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx_images(path: str | Path, dtype=np.float32) -> np.ndarray:
    """Parse an IDX image file into (N, 1, H, W) with pixels in [0, 1]."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated IDX header at offset {len(raw)}")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{path}: bad image magic 0x{magic:08x} at offset 0 "
            f"(expected 0x{IDX_IMAGE_MAGIC:08x})"
        )
    expect = 16 + n * h * w
    if len(raw) != expect:
        raise FormatError(
            f"{path}: expected {expect} bytes for {n} images of {h}x{w}, "
            f"got {len(raw)} (problem at offset {min(len(raw), expect)})"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return (pixels.reshape(n, 1, h, w).astype(dtype)) / dtype(255.0)


def load_idx_labels(path: str | Path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header at offset {len(raw)}")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(
            f"{path}: bad label magic 0x{magic:08x} at offset 0 "
            f"(expected 0x{IDX_LABEL_MAGIC:08x})"
        )
    if len(raw) != 8 + n:
        raise FormatError(
            f"{path}: expected {8 + n} bytes for {n} labels, got {len(raw)} "
            f"(problem at offset {min(len(raw), 8 + n)})"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx(images_path: str | Path, labels_path: str | Path,
             class_count: int = 10, dtype=np.float32) -> LabeledDataset:
    images = load_idx_images(images_path, dtype=dtype)
    labels = load_idx_labels(labels_path)
    return LabeledDataset(images, labels, class_count)


def save_idx(ds: LabeledDataset, images_path: str | Path,
             labels_path: str | Path) -> None:
    """Write a dataset back to IDX files (inverse of :func:`load_idx`)."""
    n, c, h, w = ds.images.shape
    if c != 1:
        raise FormatError(f"IDX image files are single-channel, got {c} channels")
    pixels = np.rint(ds.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_idx_dir(root: str | Path, dtype=np.float32) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the standard MNIST-style file quadruple from a directory.

    Accepts either raw files or their ``.gz`` forms.
    """
    root = Path(root)

    def find(stem: str) -> Path:
        for candidate in (root / stem, root / f"{stem}.gz"):
            if candidate.exists():
                return candidate
        raise FormatError(f"missing dataset file {root / stem}[.gz]")

    train = load_idx(find(MNIST_FILES["train_images"]),
                     find(MNIST_FILES["train_labels"]), dtype=dtype)
    test = load_idx(find(MNIST_FILES["test_images"]),
                    find(MNIST_FILES["test_labels"]), dtype=dtype)
    train.split, test.split = "train", "test"
    return train, test


def load_cifar10_file(path: str | Path, dtype=np.float32) -> LabeledDataset:
    """Parse one CIFAR-10 binary batch (3073-byte records, planar RGB)."""
    raw = _read_bytes(path)
    if len(raw) % CIFAR_RECORD != 0:
        n_full = len(raw) // CIFAR_RECORD
        raise FormatError(
            f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD} "
            f"(expected {(n_full + 1) * CIFAR_RECORD} for {n_full + 1} records)"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(dtype) / dtype(255.0)
    return LabeledDataset(images, labels, 10)


def load_cifar10_dir(root: str | Path, dtype=np.float32) -> tuple[LabeledDataset, LabeledDataset]:
    root = Path(root)
    train_parts = []
    for i in range(1, 6):
        path = root / f"data_batch_{i}.bin"
        if not path.exists():
            raise FormatError(f"missing dataset file {path}")
        train_parts.append(load_cifar10_file(path, dtype=dtype))
    images = np.concatenate([p.images for p in train_parts])
    labels = np.concatenate([p.labels for p in train_parts])
    train = LabeledDataset(images, labels, 10, split="train")
    test_path = root / "test_batch.bin"
    if not test_path.exists():
        raise FormatError(f"missing dataset file {test_path}")
    test = load_cifar10_file(test_path, dtype=dtype)
    test.split = "test"
    return train, test


def channel_stats(ds: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation over all pixels."""
    mean = ds.images.mean(axis=(0, 2, 3))
    std = ds.images.std(axis=(0, 2, 3))
    return mean, std


def normalize(ds: LabeledDataset, stats: tuple[np.ndarray, np.ndarray] | None = None
              ) -> LabeledDataset:
    """Standardize each channel: (x - mean) / std.

    Stats default to the dataset's own per-channel statistics (callers
    normalizing a test split should pass the training-split stats).
    """
    if stats is None:
        stats = channel_stats(ds)
    mean, std = (np.asarray(s, dtype=ds.images.dtype) for s in stats)
    if np.any(std <= 0):
        bad = np.where(std <= 0)[0].tolist()
        raise ValueError(f"zero standard deviation in channel(s) {bad}")
    images = (ds.images - mean.reshape(1, -1, 1, 1)) / std.reshape(1, -1, 1, 1)
    return replace(ds, images=images)


def split_train_val(ds: LabeledDataset, val_fraction: float = 0.2,
                    seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic seeded split (e.g. 60k MNIST train -> 48k/12k)."""
    n = len(ds)
    n_val = int(round(n * val_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    train = LabeledDataset(ds.images[train_idx], ds.labels[train_idx],
                           ds.class_count, split="train")
    val = LabeledDataset(ds.images[val_idx], ds.labels[val_idx],
                         ds.class_count, split="val")
    return train, val


def iter_batches(images: np.ndarray, labels: np.ndarray, batch_size: int,
                 *, shuffle: bool = True, seed: int = 0, epoch: int = 0):
    """Yield (images, labels) batches covering every sample exactly once.

    The shuffle is keyed on (seed, epoch) so runs are reproducible; the
    final partial batch is kept.
    """
    n = images.shape[0]
    if shuffle:
        order = np.random.default_rng((seed, epoch)).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield images[idx], labels[idx]


def batches_per_epoch(n: int, batch_size: int) -> int:
    return (n + batch_size - 1) // batch_size
