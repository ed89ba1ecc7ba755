from __future__ import annotations

import argparse

from ghvit.gradcheck import GRADCHECKS, require_passing, run_gradcheck


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    parser.add_argument("--only", action="append", choices=list(GRADCHECKS), metavar="OP", help="repeatable")
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    results = run_gradcheck(args.only, seed=args.seed)
    width = max(len(r.op) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.op:<{width}}  {r.max_rel_error:.3e}  (< {r.tolerance:.0e})  {status}")
    require_passing(results)
    return 0
