"""Sweep execution: run every grid cell, collect results in grid order."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from ..data import LongFrame, check_alignment, validate_frame
from ..errors import DataError, NoRunnableCells, TsstratError
from ..validation import BacktestResult, CellResult, ExperimentConfig, RunReport, backtest, evaluate
from .config import RunConfig

log = logging.getLogger(__name__)


@dataclass
class CellOutcome:
    cell_id: str
    config: ExperimentConfig
    result: CellResult | BacktestResult | None
    wall_time: float
    reason: str = ""  # exception class name when skipped
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.result is not None


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _precheck(frame: LongFrame, cfg: ExperimentConfig) -> tuple[str, str] | None:
    if cfg.mode.requires_alignment and not check_alignment(frame):
        return "NotAligned", f"{cfg.mode.label} mode needs every series on the same timestamps"
    return None


def run_cell(frame: LongFrame, cell_id: str, cfg: ExperimentConfig,
             backtest_windows: int | None = None, stride: int | None = None) -> CellOutcome:
    """Evaluate one cell; library errors turn into a skip with the error's class name as reason."""
    start = time.perf_counter()
    skip = _precheck(frame, cfg)
    if skip is None:
        try:
            if backtest_windows is None:
                result = evaluate(frame, cfg)
            else:
                result = backtest(frame, cfg, backtest_windows, stride)
            return CellOutcome(cell_id, cfg, result, time.perf_counter() - start)
        except TsstratError as e:
            skip = type(e).__name__, str(e)
    log.info("skipping cell %s (%s): %s", cell_id, *skip)
    return CellOutcome(cell_id, cfg, None, time.perf_counter() - start, *skip)


def _run_cell_args(args):
    return run_cell(*args)


def load_checked(config: RunConfig) -> LongFrame:
    frame = config.load_dataset()
    report = validate_frame(frame)
    if not report.ok:
        raise DataError("dataset failed validation:\n" + report.format(frame.frequency))
    return frame


def run_cells(config: RunConfig, frame: LongFrame | None = None, jobs: int = 1,
              backtest_mode: bool = False) -> list[CellOutcome]:
    """Run every cell; results come back in grid order whatever ``jobs`` is."""
    frame = load_checked(config) if frame is None else frame
    cells = config.cells()
    extra = (config.backtest_windows, config.backtest_stride) if backtest_mode else ()
    tasks = [(frame, cid, cfg, *extra) for cid, cfg in cells]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            outcomes = list(pool.map(_run_cell_args, tasks))
    else:
        outcomes = [_run_cell_args(t) for t in tasks]
    if not any(o.ok for o in outcomes):
        reasons = sorted({o.reason for o in outcomes})
        raise NoRunnableCells(f"none of the {len(outcomes)} cells could run (reasons: {', '.join(reasons)})")
    return outcomes


def run_sweep(config: RunConfig, frame: LongFrame | None = None, jobs: int = 1) -> tuple[RunReport, list[CellOutcome]]:
    outcomes = run_cells(config, frame, jobs)
    report = RunReport(
        [o.result for o in outcomes if o.ok], config.hash, config.seed,
        [(o.cell_id, o.reason, o.message) for o in outcomes if not o.ok],
    )
    return report, outcomes
