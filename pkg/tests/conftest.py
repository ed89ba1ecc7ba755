from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from ghvit.config import settings
from ghvit.data import DATASETS, DatasetSplit, write_idx_pair
from ghvit.model import build_variant
from ghvit.rng import Rng


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: long-running accuracy runs on real dataset files")
    config.addinivalue_line("markers", "needs_dataset(name): skip unless the dataset is under GHVIT_DATA_DIR")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    for item in items:
        for marker in item.iter_markers(name="needs_dataset"):
            name = marker.args[0]
            root = Path(settings.data_dir) / name
            if not (root / "train-images-idx3-ubyte").is_file() and not (root / "train-images-idx3-ubyte.gz").is_file():
                item.add_marker(pytest.mark.skip(reason=f"dataset files for {name} not found under {settings.data_dir}"))


def patterned_images(labels: np.ndarray, side: int, patch: int, seed: int = 0) -> np.ndarray:
    """uint8 images where every patch lights the same class-specific pixel, plus faint noise.

    Class k lights pixel k (row-major) of each patch, so no two classes are
    brightness rescalings of each other.
    """
    num_classes = int(labels.max()) + 1
    if num_classes > patch * patch:
        raise ValueError(f"{num_classes} classes need patches of at least {num_classes} pixels")
    patterns = np.zeros((num_classes, patch * patch), dtype=np.float32)
    patterns[np.arange(num_classes), np.arange(num_classes)] = 1.0
    reps = side // patch
    tiled = np.tile(patterns.reshape(num_classes, patch, patch), (1, reps, reps))[labels]
    noise = Rng(seed).uniform(tiled.shape, 0.0, 0.1)
    return np.clip(255 * (0.9 * tiled + noise), 0, 255).astype(np.uint8)


def make_split(count: int, side: int, patch: int, num_classes: int, seed: int = 0) -> DatasetSplit:
    labels = np.arange(count) % num_classes
    images = patterned_images(labels, side, patch, seed)
    return DatasetSplit(
        images=(images.astype(np.float32) / 255.0)[..., None],
        labels=labels.astype(np.int64),
        num_classes=num_classes,
    )


@pytest.fixture
def tiny_config():
    """gcn_hvit_1 on 8x8 single-channel images, 4 classes."""
    return build_variant("gcn_hvit_1", (8, 8, 1), num_classes=4, embed_dim=8, layers_per_level=1, heads=2)


@pytest.fixture
def tiny_split():
    return make_split(64, side=8, patch=2, num_classes=4)


@pytest.fixture
def mnist_dir(tmp_path: Path) -> Path:
    """A data root holding a small synthetic `mnist` in IDX form (96 train, 32 test)."""
    info = DATASETS["mnist"]
    root = tmp_path / "data"
    target = root / "mnist"
    target.mkdir(parents=True)
    for split, count, stride in (("train", 96, 1), ("t10k", 32, 3)):
        labels = (np.arange(count) * stride % info.num_classes).astype(np.uint8)
        images = patterned_images(labels, info.image_size, info.image_size // 4)
        write_idx_pair(
            images,
            labels,
            target / f"{split}-images-idx3-ubyte",
            target / f"{split}-labels-idx1-ubyte",
        )
    return root


@pytest.fixture
def tiny_run_file(tmp_path: Path, mnist_dir: Path) -> Path:
    path = tmp_path / "tiny.conf"
    path.write_text(
        "\n".join(
            [
                "# tiny run over the synthetic mnist fixture",
                "variant = gcn_hvit_1",
                "dataset = mnist",
                f"data_dir = {mnist_dir}",
                "embed_dim = 8",
                "layers_per_level = 1",
                "heads = 2",
                "batch_size = 16",
                "epochs = 2",
                "learning_rate = 0.01",
                f"out = {tmp_path / 'run'}",
                "",
            ]
        ),
        encoding="utf-8",
    )
    return path
