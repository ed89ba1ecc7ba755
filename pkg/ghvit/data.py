"""IDX image/label files, the dataset registry and seeded minibatching.

IDX layout: big-endian u32 magic (0x00000803 images, 0x00000801 labels), one
big-endian u32 extent per dimension, then unsigned bytes in row-major order.
"""
from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal, Tuple, Union

import numpy as np

from ghvit.errors import DataFormatError
from ghvit.rng import SHUFFLE_STREAM, Rng

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

PathLike = Union[str, Path]
SplitName = Literal["train", "test"]


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    image_size: int
    channels: int
    num_classes: int
    train_count: int
    test_count: int


DATASETS: dict[str, DatasetInfo] = {
    "mnist": DatasetInfo("mnist", 28, 1, 10, 60_000, 10_000),
    "fashion_mnist": DatasetInfo("fashion_mnist", 28, 1, 10, 60_000, 10_000),
    # pre-rendered to 64x64 IDX files, see docs/USAGE.md
    "quickdraw": DatasetInfo("quickdraw", 64, 1, 10, 16_000, 4_000),
}

_FILE_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    images: np.ndarray  # [count, H, W, 1] float32 in [0, 1]
    labels: np.ndarray  # [count] int64
    num_classes: int = 10

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise DataFormatError(f"images must be [count, H, W, C], got shape {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_dims(self) -> Tuple[int, int, int]:
        _, h, w, c = self.images.shape
        return h, w, c


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 128
    seed: int = 0
    drop_last: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, path: Path) -> np.ndarray:
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header", offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataFormatError(f"{path}: truncated dimension header", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header_end
    if payload != expected:
        kind = "truncated" if payload < expected else "oversized"
        raise DataFormatError(
            f"{path}: {kind} payload, expected {expected} bytes for dims {dims}, found {payload}",
            offset=header_end + min(payload, expected),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx_pair(images_path: PathLike, labels_path: PathLike, num_classes: int = 10) -> DatasetSplit:
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, labels_path)
    if len(images) != len(labels):
        raise DataFormatError(
            f"image count {len(images)} ({images_path}) does not match label count {len(labels)} ({labels_path})",
            details={"images": len(images), "labels": len(labels)},
            offset=4,
        )
    bad = np.nonzero(labels >= num_classes)[0]
    if len(bad):
        raise DataFormatError(
            f"{labels_path}: label {labels[bad[0]]} outside [0, {num_classes})", offset=8 + int(bad[0])
        )
    scaled = (images.astype(np.float32) / np.float32(255.0))[..., np.newaxis]
    logger.info("loaded %s: %d images of %dx%d", images_path.name, len(images), images.shape[1], images.shape[2])
    return DatasetSplit(images=scaled, labels=labels.astype(np.int64), num_classes=num_classes)


def write_idx_pair(images_u8: np.ndarray, labels: np.ndarray, images_path: PathLike, labels_path: PathLike) -> None:
    """Write [count, H, W] uint8 images and [count] labels as IDX files."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images_u8.ndim != 3 or labels.ndim != 1:
        raise DataFormatError(f"expected [count, H, W] images and [count] labels, got {images_u8.shape}, {labels.shape}")
    Path(images_path).write_bytes(struct.pack(">4I", IMAGE_MAGIC, *images_u8.shape) + images_u8.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes())


def dataset_paths(name: str, data_dir: PathLike, split: SplitName) -> Tuple[Path, Path]:
    """Resolve a registry dataset's IDX pair, preferring the plain file over `.gz`."""
    if name not in DATASETS:
        raise DataFormatError(f"unknown dataset {name!r}; valid: {', '.join(DATASETS)}")
    root = Path(data_dir) / name
    resolved = []
    for file_name in _FILE_NAMES[split]:
        plain, packed = root / file_name, root / f"{file_name}.gz"
        if plain.is_file():
            resolved.append(plain)
        elif packed.is_file():
            resolved.append(packed)
        else:
            raise DataFormatError(f"missing dataset file {plain} (or {packed.name})", details={"path": str(plain)})
    return resolved[0], resolved[1]


def subset(split: DatasetSplit, n: int) -> DatasetSplit:
    """First n examples; n <= 0 or n >= len keeps everything."""
    if n <= 0 or n >= len(split):
        return split
    return DatasetSplit(images=split.images[:n], labels=split.labels[:n], num_classes=split.num_classes)


def load_dataset(name: str, data_dir: PathLike, split: SplitName, limit: int = 0) -> DatasetSplit:
    images_path, labels_path = dataset_paths(name, data_dir, split)
    info = DATASETS[name]
    loaded = load_idx_pair(images_path, labels_path, num_classes=info.num_classes)
    if loaded.image_dims != (info.image_size, info.image_size, info.channels):
        raise DataFormatError(
            f"{name} images are {loaded.image_dims}, expected {(info.image_size, info.image_size, info.channels)}"
        )
    return subset(loaded, limit)


def epoch_order(count: int, plan: BatchPlan, epoch: int) -> np.ndarray:
    return Rng(plan.seed).fork(SHUFFLE_STREAM, epoch).permutation(count)


def batches(
    split: DatasetSplit, plan: BatchPlan, epoch: int = 0, *, shuffle: bool = True
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) minibatches; the order depends only on (seed, epoch)."""
    count = len(split)
    order = epoch_order(count, plan, epoch) if shuffle else np.arange(count)
    for start in range(0, count, plan.batch_size):
        idx = order[start : start + plan.batch_size]
        if plan.drop_last and len(idx) < plan.batch_size:
            return
        yield split.images[idx], split.labels[idx]


def batch_count(count: int, plan: BatchPlan) -> int:
    return count // plan.batch_size if plan.drop_last else -(-count // plan.batch_size)
