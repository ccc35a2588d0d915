"""Command line: ``promptmcts {optimize,evaluate,report,validate-data,replay}``.

Exit status is 0 on success, 2 for usage and configuration errors and 1
for failures at run time (data errors, backend failures, missing mocks).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .data import DatasetError
from .gateway import BackendError
from .mcts import ResumableRunError
from .prompt_space import CompositionError, SchemaError
from .runner import (
    ConfigError, load_config, run_evaluate, run_optimize, run_replay, run_report, run_validate_data,
)

log = logging.getLogger("promptmcts")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="run configuration (TOML)")
    p.add_argument("--seed", type=int, default=None, help="seed for every stochastic choice")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptmcts", description="Tree-search prompt optimization.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run the prompt search")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")
    p.add_argument("--overwrite", action="store_true", help="discard an existing run in the output directory")
    p.add_argument("--until", type=int, default=None, help="stop after this many iterations")

    p = sub.add_parser("evaluate", help="score one prompt on a split")
    _common(p)
    p.add_argument("--prompt", type=Path, default=None, help="prompt state JSON (default: configured root)")
    p.add_argument("--split", default="dev", choices=("train", "dev", "test"))
    p.add_argument("--out", type=Path, default=None, help="write per-example predictions here (JSONL)")
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("report", help="write CSV reports for a finished or partial run")
    p.add_argument("--run", type=Path, required=True, help="run output directory")
    p.add_argument("--out", type=Path, default=None, help="report directory (default: RUN/reports)")

    p = sub.add_parser("validate-data", help="load and check every configured split")
    _common(p)

    p = sub.add_parser("replay", help="rescore persisted predictions without calling any model")
    _common(p)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--split", default="dev", choices=("train", "dev", "test"))
    return parser


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "report":
        _print_json(run_report(args.run, args.out))
        return 0
    cfg = load_config(args.config, args.overrides, args.seed)
    if args.command == "optimize":
        _print_json(run_optimize(cfg, resume=args.resume, overwrite=args.overwrite, until=args.until))
    elif args.command == "evaluate":
        _print_json(run_evaluate(cfg, args.prompt, args.split, args.out, args.batch_size))
    elif args.command == "replay":
        _print_json(run_replay(cfg, args.predictions, args.split))
    elif args.command == "validate-data":
        for split, ds in run_validate_data(cfg).items():
            print(f"{split}: {len(ds)} examples")
            if cfg.task == "ee":
                print(ds.counts_table())
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"promptmcts: error: {exc}", file=sys.stderr)
        return 2
    except ResumableRunError as exc:
        print(f"promptmcts: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, SchemaError, CompositionError, BackendError, OSError, ValueError) as exc:
        print(f"promptmcts: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
