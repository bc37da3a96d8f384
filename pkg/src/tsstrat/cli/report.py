"""Output files of a sweep and their table / csv renderings.

Floats in data files are written with ``repr`` so that a rerun with the same
config and seed reproduces them byte for byte. Rendered reports round to
four decimals; the table and csv renderings share the same strings.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import Frequency
from ..errors import EmptyReport
from ..strategies import ModeSpec, strategy_label, write_forecasts_csv
from ..validation import BacktestResult, CellRecord, CellResult, RankRow, leaderboard, rank_tables
from .config import RunConfig
from .sweep import CellOutcome

METRIC_COLUMNS = ["cell_id", "model", "strategy", "model_horizon", "mode", "preprocessing",
                  "datetime_features", "id_features", "fold", "split", "mae", "mse", "config_hash", "seed"]
SERIES_COLUMNS = ["cell_id", "series", "fold", "split", "mae", "mse"]
RANK_COLUMNS = ["scope", "hyperparameter", "value", "mean_rank", "median_mae", "n_groups", "config_hash", "seed"]
BACKTEST_COLUMNS = ["cell_id", "model", "strategy", "model_horizon", "mode", "preprocessing",
                    "datetime_features", "id_features", "window", "origin", "mae", "mse", "config_hash", "seed"]


def _num(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else "nan"


def _fmt(x: float) -> str:
    return "NaN" if x is None or (isinstance(x, float) and math.isnan(x)) else "%.4f" % x


def _cell_columns(cell_id: str, cfg) -> list[str]:
    return [cell_id, cfg.model.label, cfg.strategy.kind, str(cfg.strategy.model_horizon), cfg.mode.name,
            cfg.preprocessing, str(cfg.datetime_features), str(cfg.id_features)]


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _json(obj) -> str:
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def _rank_dict(r: RankRow) -> dict:
    return {"scope": r.scope, "hyperparameter": r.hyperparameter, "value": r.value,
            "mean_rank": r.mean_rank, "median_mae": r.median_mae, "n_groups": r.n_groups}


def write_outputs(config: RunConfig, outcomes: Sequence[CellOutcome], out_dir: str | Path,
                  wall_times: bool = True) -> Path:
    """metrics.csv, metrics_by_series.csv, rank_tables.csv, summary.json, manifest.json (+ forecasts/)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, seed = config.hash, str(config.seed)
    metrics, by_series, records = [], [], []
    for o in outcomes:
        if not o.ok:
            continue
        res: CellResult = o.result
        base = _cell_columns(o.cell_id, o.config)
        for f in res.folds:
            metrics.append(base + [str(f.index), "val", _num(f.score.mae), _num(f.score.mse), h, seed])
            by_series += [[o.cell_id, sid, str(f.index), "val", _num(m[0]), _num(m[1])]
                          for sid, m in f.score.by_series.items()]
        metrics.append(base + ["ensemble", "test", _num(res.test.mae), _num(res.test.mse), h, seed])
        by_series += [[o.cell_id, sid, "ensemble", "test", _num(m[0]), _num(m[1])]
                      for sid, m in res.test.by_series.items()]
        records.append(CellRecord.from_result(res))
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics)
    _write_csv(out / "metrics_by_series.csv", SERIES_COLUMNS, by_series)

    ranks = rank_tables(records)
    _write_csv(out / "rank_tables.csv", RANK_COLUMNS,
               [[r.scope, r.hyperparameter, r.value, _num(r.mean_rank), _num(r.median_mae), str(r.n_groups), h, seed]
                for r in ranks])
    test_board, val_board = leaderboard(records, 10)
    summary = {
        "config_hash": config.hash, "seed": config.seed,
        "rank_tables": [_rank_dict(r) for r in ranks],
        "leaderboard": {"test": [vars(r) for r in test_board], "val": [vars(r) for r in val_board]},
    }
    (out / "summary.json").write_text(_json(summary))
    _write_manifest(config, outcomes, out, wall_times)

    if config.save_forecasts:
        fdir = out / "forecasts"
        fdir.mkdir(exist_ok=True)
        freq = Frequency.parse(config.dataset.frequency)
        for o in outcomes:
            if o.ok:
                r = o.result
                write_forecasts_csv(fdir / f"{o.cell_id}.csv", r.forecasts, r.timestamps, freq, r.truth)
    return out


def _write_manifest(config: RunConfig, outcomes: Sequence[CellOutcome], out: Path, wall_times: bool,
                    name: str = "manifest.json") -> None:
    cells = []
    for o in outcomes:
        entry = {"cell_id": o.cell_id, "settings": o.config.settings(),
                 "status": "ok" if o.ok else "skipped", "reason": o.reason, "message": o.message}
        if wall_times:
            entry["wall_time_s"] = round(o.wall_time, 6)
        cells.append(entry)
    manifest = {
        "config_hash": config.hash, "seed": config.seed, "config": config.to_dict(),
        "n_cells": len(outcomes), "n_run": sum(o.ok for o in outcomes),
        "n_skipped": sum(not o.ok for o in outcomes), "cells": cells,
    }
    (out / name).write_text(_json(manifest))


def write_backtest(config: RunConfig, outcomes: Sequence[CellOutcome], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, seed = config.hash, str(config.seed)
    fmt = Frequency.parse(config.dataset.frequency).format
    rows = []
    for o in outcomes:
        if not o.ok:
            continue
        res: BacktestResult = o.result
        base = _cell_columns(o.cell_id, o.config)
        for w in res.windows:
            origin = fmt(min(w.origins.values()))
            rows.append(base + [str(w.index), origin, _num(w.result.test.mae), _num(w.result.test.mse), h, seed])
        rows.append(base + ["mean", "", _num(res.mae), _num(res.mse), h, seed])
    _write_csv(out / "backtest.csv", BACKTEST_COLUMNS, rows)
    _write_manifest(config, outcomes, out, True, "backtest_manifest.json")
    return out


# -- reading back and rendering ---------------------------------------------------


def read_records(out_dir: str | Path) -> list[CellRecord]:
    """Rebuild per-cell records (test MAE, mean fold validation MAE) from metrics.csv."""
    path = Path(out_dir) / "metrics.csv"
    if not path.is_file():
        raise EmptyReport(f"{path} not found")
    cells: dict[str, dict] = {}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            c = cells.setdefault(row["cell_id"], {"row": row, "val": [], "test": math.nan})
            if row["split"] == "test":
                c["test"] = float(row["mae"])
            else:
                c["val"].append(float(row["mae"]))
    records = []
    for c in cells.values():
        row = c["row"]
        settings = {
            "model": row["model"],
            "strategy": strategy_label(row["strategy"], int(row["model_horizon"])),
            "mode": ModeSpec.parse(row["mode"]).label,
            "preprocessing": row["preprocessing"],
            "datetime_features": row["datetime_features"],
            "id_features": row["id_features"],
        }
        val = float(np.mean(c["val"])) if c["val"] else math.nan
        records.append(CellRecord(settings, c["test"], val))
    return records


def _table_rows(records: Sequence[CellRecord]) -> tuple[list[str], list[list[str]]]:
    """Rank tables in a wide layout: one row per hyperparameter value, Rank / Median MAE per scope."""
    rows = rank_tables(records)
    scopes = sorted({r.scope for r in rows} - {"overall"}) + ["overall"]
    header = ["hyperparameter", "value"]
    for s in scopes:
        header += [f"{s} rank", f"{s} median_mae"]
    grid: dict[tuple[str, str], dict[str, RankRow]] = defaultdict(dict)
    order: list[tuple[str, str]] = []
    for r in rows:
        key = (r.hyperparameter, r.value)
        if key not in grid:
            order.append(key)
        grid[key][r.scope] = r
    out = []
    for key in order:
        line = list(key)
        for s in scopes:
            r = grid[key].get(s)
            line += [_fmt(r.mean_rank), _fmt(r.median_mae)] if r else ["NaN", "NaN"]
        out.append(line)
    return header, out


def _leader_rows(records: Sequence[CellRecord], k: int) -> tuple[list[str], list[list[str]]]:
    test, val = leaderboard(records, k)
    header = ["rank", "model", "strategy", "mae_test", "model", "strategy", "mae_val"]
    rows = []
    for i in range(max(len(test), len(val))):
        line = [str(i + 1)]
        line += [test[i].model, test[i].strategy, _fmt(test[i].mae)] if i < len(test) else ["", "", ""]
        line += [val[i].model, val[i].strategy, _fmt(val[i].mae)] if i < len(val) else ["", "", ""]
        rows.append(line)
    return header, rows


def _render_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)] if rows else [len(h) for h in header]

    def line(r):
        return "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()

    return "\n".join([line(header), "  ".join("-" * w for w in widths)] + [line(r) for r in rows])


def emit_report(source: str | Path | Sequence[CellRecord], fmt: str = "table", top: int = 10) -> str:
    """Rank tables plus the top-``top`` model-strategy leaderboard.

    In csv format the two blocks are separated by one blank line, each with
    its own header row.
    """
    records = read_records(source) if isinstance(source, (str, Path)) else list(source)
    if not records:
        raise EmptyReport("no completed cells to report")
    if fmt not in ("table", "csv"):
        raise ValueError("format must be table or csv")
    blocks = [_table_rows(records), _leader_rows(records, top)]
    if fmt == "csv":
        parts = []
        for header, rows in blocks:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
            parts.append(buf.getvalue())
        return "\n".join(parts)
    titles = ["Hyperparameter ranks (mean rank / median test MAE within groups of otherwise equal cells)",
              f"Best {top} model-strategy combinations by test and validation MAE"]
    return "\n\n".join(f"{t}\n{_render_table(h, r)}" for t, (h, r) in zip(titles, blocks)) + "\n"

