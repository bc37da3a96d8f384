"""``tsstrat`` command.

    tsstrat validate-data CONFIG
    tsstrat run CONFIG        [--seed N] [--output-dir DIR]
    tsstrat sweep CONFIG      [--seed N] [--output-dir DIR] [--jobs N]
    tsstrat backtest CONFIG   [--seed N] [--output-dir DIR] [--jobs N]
    tsstrat report OUTPUT_DIR [--format table|csv] [--top K]

Exit codes: 0 success, 2 config error, 3 data error, 4 no runnable cells.
The log level comes from the TSSTRAT_LOG_LEVEL environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from ..data import validate_frame
from ..errors import ConfigError, TsstratError
from .config import RunConfig, parse_config
from .report import emit_report, write_backtest, write_outputs
from .sweep import default_jobs, run_cells

log = logging.getLogger("tsstrat")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsstrat", description="Multi-step forecasting strategy experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate-data", help="load the configured dataset and report its structure")
    v.add_argument("config")

    for name, text in (("run", "evaluate a config that describes a single cell"),
                       ("sweep", "evaluate every cell of the config grid"),
                       ("backtest", "rolling-origin backtest of every cell")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--output-dir", help="override the config output directory")
        if name != "run":
            s.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes")

    r = sub.add_parser("report", help="render rank tables and the leaderboard of a finished sweep")
    r.add_argument("output_dir")
    r.add_argument("--format", choices=("table", "csv"), default="table")
    r.add_argument("--top", type=int, default=10)
    return p


def _load(args) -> RunConfig:
    cfg = parse_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "output_dir", None) is not None:
        overrides["output_dir"] = args.output_dir
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _output_dir(cfg: RunConfig, args) -> Path:
    # a relative output_dir from the config file is taken relative to that file
    out = Path(cfg.output_dir)
    if getattr(args, "output_dir", None) is None and not out.is_absolute():
        out = Path(cfg.base_dir) / out
    return out


def _summary(outcomes) -> str:
    ok = sum(o.ok for o in outcomes)
    return f"{ok} of {len(outcomes)} cells ran, {len(outcomes) - ok} skipped"


def _dispatch(args) -> int:
    if args.command == "report":
        sys.stdout.write(emit_report(args.output_dir, args.format, args.top))
        return 0
    cfg = _load(args)
    if args.command == "validate-data":
        frame = cfg.load_dataset()
        report = validate_frame(frame)
        print(report.format(frame.frequency))
        return 0 if report.ok else 3
    out = _output_dir(cfg, args)
    if args.command == "run":
        if len(cfg.cells()) != 1:
            raise ConfigError(f"run needs a config with exactly one cell, this one has {len(cfg.cells())}; use sweep")
        outcomes = run_cells(cfg, jobs=1)
        write_outputs(cfg, outcomes, out)
    elif args.command == "sweep":
        outcomes = run_cells(cfg, jobs=args.jobs)
        write_outputs(cfg, outcomes, out)
    else:
        outcomes = run_cells(cfg, jobs=args.jobs, backtest_mode=True)
        write_backtest(cfg, outcomes, out)
    print(f"{_summary(outcomes)}; results in {out}")
    if args.command != "backtest":
        sys.stdout.write(emit_report(out))
    return 0


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("TSSTRAT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except TsstratError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
