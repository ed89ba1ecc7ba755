from __future__ import annotations

import argparse

from ghvit.ablation import ABLATION_CSV, run_ablation
from ghvit.commands.common import add_run_options, resolve_run
from ghvit.model import VARIANTS


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _name_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("ablate", help="train every variant over several seeds and compare")
    add_run_options(parser)
    parser.add_argument("--seeds", type=_int_list, default=[0, 1, 2], help="comma-separated (default 0,1,2)")
    parser.add_argument("--variants", type=_name_list, default=list(VARIANTS), help="comma-separated")
    parser.add_argument("--workers", type=int, default=1, help="runs trained concurrently")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    base = resolve_run(args)
    if args.out is None:
        base = base.model_copy(update={"out": base.out.parent / f"ablation-{base.dataset}"})
    report = run_ablation(base, args.variants, args.seeds, args.workers)
    print(report.format_table())
    print(f"runs: {base.out / ABLATION_CSV}")
    return 0
