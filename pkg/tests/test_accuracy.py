"""Accuracy runs on the real datasets. Hours of CPU for the full protocol."""
from __future__ import annotations

import pytest

from ghvit.ablation import run_ablation
from ghvit.config import build_run_config
from ghvit.train import run_training

pytestmark = pytest.mark.slow


@pytest.mark.needs_dataset("mnist")
def test_small_gcn_hvit_1_learns_mnist_subset(tmp_path):
    run = build_run_config(
        {
            "variant": "gcn_hvit_1",
            "dataset": "mnist",
            "embed_dim": 32,
            "layers_per_level": 2,
            "heads": 4,
            "epochs": 5,
            "train_limit": 6000,
            "out": tmp_path,
        }
    ).resolved()
    ckpt = run_training(run)
    assert ckpt.history[-1].test_accuracy >= 0.92


@pytest.mark.needs_dataset("mnist")
def test_gcn_hvit_1_full_mnist_protocol(tmp_path):
    run = build_run_config({"variant": "gcn_hvit_1", "dataset": "mnist", "epochs": 30, "out": tmp_path}).resolved()
    ckpt = run_training(run)
    assert ckpt.history[-1].test_accuracy >= 0.98


@pytest.mark.needs_dataset("fashion_mnist")
def test_gcn_positions_beat_flat_vit_on_fashion_subset(tmp_path):
    base = build_run_config(
        {"dataset": "fashion_mnist", "epochs": 10, "train_limit": 10_000, "out": tmp_path}
    ).resolved()
    report = run_ablation(base, ["vit4", "hvit", "gcn_hvit_2", "gcn_hvit_1"], [0, 1, 2], workers=2)
    print(report.format_table())
    assert report.ordering_holds("gcn_hvit_1", "vit4")
