from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from ghvit.commands.ablate import register as register_ablate
from ghvit.commands.eval import register as register_eval
from ghvit.commands.gradcheck import register as register_gradcheck
from ghvit.commands.metrics import register as register_metrics_export
from ghvit.commands.train import register as register_train
from ghvit.config import settings
from ghvit.errors import ConfigError, GhvitError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_REJECTED = 2

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghvit",
        description="Hierarchical vision transformers with GCN positional embeddings.",
    )
    parser.add_argument(
        "--log-level",
        default=None,
        help=f"logging level (default from GHVIT_LOG_LEVEL, currently {settings.log_level})",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command", required=True)
    register_train(subparsers)
    register_eval(subparsers)
    register_gradcheck(subparsers)
    register_metrics_export(subparsers)
    register_ablate(subparsers)
    return parser


def configure_logging(level: Optional[str]) -> None:
    name = (level or settings.log_level).upper()
    if name not in LOG_LEVELS:
        raise ConfigError(f"unknown log level {name!r}; valid: {', '.join(LOG_LEVELS)}")
    logging.basicConfig(
        level=name,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level)
        return int(args.func(args) or EXIT_OK)
    except GhvitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_UNEXPECTED
    except Exception as exc:  # noqa: BLE001
        logger.exception("unhandled error")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    raise SystemExit(main())
