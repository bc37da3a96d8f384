"""Command-line front end: config parsing, sweeps and reports."""

from .config import DatasetConfig, RunConfig, config_hash, parse_config, parse_config_dict
from .main import main
from .report import emit_report, read_records, write_backtest, write_outputs
from .sweep import CellOutcome, run_cell, run_cells, run_sweep

__all__ = [
    "CellOutcome",
    "DatasetConfig",
    "RunConfig",
    "config_hash",
    "emit_report",
    "main",
    "parse_config",
    "parse_config_dict",
    "read_records",
    "run_cell",
    "run_cells",
    "run_sweep",
    "write_backtest",
    "write_outputs",
]
