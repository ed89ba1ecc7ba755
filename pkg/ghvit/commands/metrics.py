from __future__ import annotations

import argparse
from pathlib import Path

from ghvit.metrics import export_csv


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("metrics-export", help="metrics file to epoch,train_loss,test_accuracy CSV")
    parser.add_argument("metrics", type=Path, help="metrics.jsonl written by train")
    parser.add_argument("--out", type=Path, help="CSV path (default: next to the metrics file)")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    out = args.out or args.metrics.with_suffix(".csv")
    count = export_csv(args.metrics, out)
    print(f"wrote {count} rows to {out}")
    return 0
