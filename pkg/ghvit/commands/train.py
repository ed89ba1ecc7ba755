from __future__ import annotations

import argparse
import logging
from pathlib import Path

from ghvit.checkpoint import load_checkpoint
from ghvit.commands.common import add_run_options, format_epoch, resolve_run
from ghvit.train import CHECKPOINT_NAME, METRICS_NAME, run_training

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="train one variant on one dataset")
    add_run_options(parser)
    parser.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    run_config = resolve_run(args)
    if resume is not None:
        logger.info("resuming from %s at epoch %d", args.checkpoint, resume.epoch)
    logger.info("training %s on %s for %d epochs", run_config.variant, run_config.dataset, run_config.epochs)

    ckpt = run_training(run_config, resume=resume, on_epoch=lambda r: print(format_epoch(r), flush=True))

    out = Path(run_config.out)
    print(f"checkpoint: {out / CHECKPOINT_NAME}")
    print(f"metrics: {out / METRICS_NAME} ({len(ckpt.history)} epochs)")
    return 0
