from __future__ import annotations

import argparse
from pathlib import Path

from ghvit.checkpoint import load_checkpoint
from ghvit.data import load_dataset
from ghvit.train import evaluate, model_from_checkpoint


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("eval", help="accuracy of a checkpoint on a dataset split")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--split", choices=("train", "test"), help="default: eval_split from the checkpoint config")
    parser.add_argument("--data-dir", type=Path, help="dataset root (default: the one recorded in the checkpoint)")
    parser.add_argument("--limit", type=int, default=None, help="first n examples only")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    run_config, model = model_from_checkpoint(ckpt)
    split = args.split or run_config.eval_split
    default_limit = run_config.test_limit if split == "test" else run_config.train_limit
    data = load_dataset(
        run_config.dataset,
        args.data_dir or run_config.resolved().data_dir,
        split,
        default_limit if args.limit is None else args.limit,
    )
    accuracy = evaluate(model, data)
    print(f"{run_config.variant} {run_config.dataset} {split} accuracy: {100 * accuracy:.2f}%")
    return 0
