from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any

from ghvit.config import RunConfig, load_run_config
from ghvit.data import DATASETS
from ghvit.metrics import EpochRecord
from ghvit.model import VARIANTS


def add_run_options(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every command that resolves a RunConfig."""
    parser.add_argument("--config", type=Path, help="key=value run config file")
    parser.add_argument("--variant", choices=list(VARIANTS))
    parser.add_argument("--dataset", choices=list(DATASETS))
    parser.add_argument("--data-dir", type=Path, help="dataset root (default GHVIT_DATA_DIR)")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=Path, help="output directory for the run")


def run_overrides(args: argparse.Namespace) -> dict[str, Any]:
    names = ("variant", "dataset", "data_dir", "epochs", "seed", "out")
    return {name: getattr(args, name, None) for name in names}


def resolve_run(args: argparse.Namespace, **extra: Any) -> RunConfig:
    return load_run_config(args.config, {**run_overrides(args), **extra})


def format_epoch(record: EpochRecord) -> str:
    return (
        f"epoch {record.epoch:>3}  train_loss {record.train_loss:.6f}  "
        f"test_accuracy {100 * record.test_accuracy:.2f}%"
    )
