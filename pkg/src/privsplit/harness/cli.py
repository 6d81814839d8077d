"""Command-line entry point: ``privsplit <subcommand> --config run.json``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..errors import ConfigError, DataError
from .config import MODES, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privsplit", description="Privacy-aware split-model search")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        if mode == "report":
            p.add_argument("--run", nargs="+", required=True, help="run directories to summarize")
            p.add_argument("--out", help="where to write summary files (default: first run dir)")
        else:
            p.add_argument("--config", required=True, help="run configuration JSON")
            p.add_argument("--out", help="run directory (default: $PRIVSPLIT_OUT_DIR or output_dir, plus name)")
            p.add_argument("--seed", type=int, action="append", help="override the config seeds")
    return parser


def run_dir_for(cfg, out: Optional[str]) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get("PRIVSPLIT_OUT_DIR") or cfg.output_dir) / cfg.name


def _dispatch(args) -> int:
    if args.command == "report":
        from .report import emit_report
        rows = emit_report(args.run, args.out)
        print(f"report: {len(rows)} summary rows written to {args.out or args.run[0]}")
        return EXIT_OK
    cfg = load_config(args.config)
    changes = {"mode": args.command}
    if args.seed:
        changes["seeds"] = tuple(args.seed)
    cfg = dataclasses.replace(cfg, **changes)
    from .runner import run
    run_dir = run_dir_for(cfg, args.out)
    summary = run(cfg, run_dir)
    best = summary.get("best")
    print(f"{args.command}: wrote {run_dir}" + (f" (best {best})" if best else ""))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything else is a runtime failure with a one-line diagnostic
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
