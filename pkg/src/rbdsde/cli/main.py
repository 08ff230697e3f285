"""Argument parsing and dispatch for the rbdsde command line.

Exit codes: 0 success, 1 configuration or runtime error, 2 quality-gate
failure (non-convergence report from solve, failed verify property).
"""

from __future__ import annotations

import argparse
import sys

from ..errors import RBDSDEError
from .commands import cmd_field, cmd_solve, cmd_study, cmd_verify
from .config import COMMANDS, load_config

_DISPATCH = {
    "solve": cmd_solve,
    "study": cmd_study,
    "field": cmd_field,
    "verify": cmd_verify,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default, which this tool reserves
    # for quality-gate failures; route usage problems to exit 1 instead
    def error(self, message):
        raise _UsageError(message)


def build_parser():
    parser = _Parser(
        prog="rbdsde",
        description="Reflected backward doubly stochastic experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    help_lines = {
        "solve": "run the penalization ladder and write solution diagnostics",
        "study": "run the penalty decay study and uniform-estimate report",
        "field": "evaluate the value field (optionally measure and weak form)",
        "verify": "run the built-in property suite",
    }
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=help_lines[name])
        cmd.add_argument("--config", required=True, help="TOML run configuration")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--threads", type=int, default=1,
                         help="worker threads for independent suite items")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = load_config(args.command, args.config, args.out,
                          seed_override=args.seed, threads=args.threads)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        return _DISPATCH[args.command](cfg)
    except RBDSDEError as exc:
        field = getattr(exc, "field", None)
        where = f" (field: {field})" if field else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
