"""Rolling-origin cross-validation, backtesting, metrics and rank aggregation."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import LongFrame, temporal_split
from .errors import (
    ConfigError,
    DegenerateGroup,
    LengthMismatch,
    TooShortForBacktest,
    TooShortForFolds,
)
from .models import ModelSpec
from .strategies import Forecaster, ModeSpec, StrategySpec, fit_forecaster, forecast_timestamps
from .transforms import PipelineState, TransformSpec

log = logging.getLogger(__name__)

SETTINGS = ("model", "strategy", "mode", "preprocessing", "datetime_features", "id_features")


# -- metrics ------------------------------------------------------------------


def compute_metrics(pred, truth) -> tuple[float, float]:
    """``(MAE, MSE)`` of ``pred`` against ``truth``."""
    p = np.asarray(pred, dtype=float).ravel()
    y = np.asarray(truth, dtype=float).ravel()
    if p.shape != y.shape:
        raise LengthMismatch(f"prediction has {p.size} values, truth has {y.size}")
    if p.size == 0:
        raise LengthMismatch("cannot score empty arrays")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(y))):
        raise ValueError("metrics need finite predictions and truth")
    d = p - y
    return float(np.mean(np.abs(d))), float(np.mean(d * d))


@dataclass(frozen=True)
class Score:
    mae: float
    mse: float
    by_series: Mapping[str, tuple[float, float]] = field(default_factory=dict)


def score_forecasts(pred: Mapping[str, np.ndarray], truth: Mapping[str, np.ndarray]) -> Score:
    """Per-series and pooled metrics; pooled means over every forecast point."""
    if set(pred) != set(truth):
        raise LengthMismatch(f"forecast covers {sorted(pred)}, truth covers {sorted(truth)}")
    ids = sorted(truth)
    by_series = {sid: compute_metrics(pred[sid], truth[sid]) for sid in ids}
    mae, mse = compute_metrics(np.concatenate([pred[s] for s in ids]), np.concatenate([truth[s] for s in ids]))
    return Score(mae, mse, by_series)


# -- CV plan ------------------------------------------------------------------


@dataclass(frozen=True)
class CVSpec:
    scheme: str = "expanding"
    n_folds: int = 3
    window: int | None = None  # rolling scheme only

    def __post_init__(self):
        if self.scheme not in ("expanding", "rolling"):
            raise ConfigError(f"cv scheme must be expanding or rolling, got {self.scheme!r}")
        if not (isinstance(self.n_folds, int) and self.n_folds >= 0):
            raise ConfigError("cv n_folds must be a non-negative integer (0 disables CV)")
        if self.window is not None and not (isinstance(self.window, int) and self.window >= 1):
            raise ConfigError("cv window must be a positive integer")
        if self.window is not None and self.scheme != "rolling":
            raise ConfigError("cv window only applies to the rolling scheme")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "n_folds": self.n_folds, "window": self.window}


@dataclass(frozen=True)
class SplitPlan:
    """Fold boundaries per series as 0-based ``[start, end)`` positions.

    Fold ``k`` trains on ``[train_start, train_end)`` and validates on
    ``[train_end, train_end + horizon)``. Ends count back from each series'
    own end, so unaligned series get the same number of folds.
    """

    scheme: str
    n_folds: int
    horizon: int
    window: int | None
    lengths: Mapping[str, int]

    def train_range(self, k: int, series_id: str) -> tuple[int, int]:
        end = self.lengths[series_id] - (self.n_folds - k) * self.horizon
        start = 0 if self.scheme == "expanding" else end - self._window(series_id)
        return start, end

    def val_range(self, k: int, series_id: str) -> tuple[int, int]:
        end = self.train_range(k, series_id)[1]
        return end, end + self.horizon

    def _window(self, series_id: str) -> int:
        if self.window is not None:
            return self.window
        return self.lengths[series_id] - self.n_folds * self.horizon

    def fold(self, frame: LongFrame, k: int) -> tuple[LongFrame, LongFrame]:
        if not 0 <= k < self.n_folds:
            raise IndexError(f"fold {k} out of range for {self.n_folds} folds")
        train, val = [], []
        for s in frame:
            train.append(s.slice(*self.train_range(k, s.id)))
            val.append(s.slice(*self.val_range(k, s.id)))
        return frame.with_series(train), frame.with_series(val)


def make_cv_splits(
    frame: LongFrame,
    scheme: str = "expanding",
    n_folds: int = 3,
    horizon: int = 24,
    history: int = 0,
    window: int | None = None,
) -> SplitPlan:
    CVSpec(scheme, n_folds, window)
    if n_folds < 1:
        raise ConfigError("make_cv_splits needs at least one fold")
    lengths = frame.lengths()
    for sid, T in lengths.items():
        if T < history + n_folds * horizon:
            raise TooShortForFolds(
                f"series {sid!r} has {T} points; {n_folds} folds of horizon {horizon} "
                f"with history {history} need {history + n_folds * horizon}"
            )
        if scheme == "rolling":
            first_end = T - n_folds * horizon
            w = window if window is not None else first_end
            if w > first_end or w < history:
                raise TooShortForFolds(
                    f"series {sid!r}: rolling window {w} does not fit before the first fold end {first_end}"
                )
    return SplitPlan(scheme, n_folds, horizon, window, dict(lengths))


# -- experiment cell ------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One fully specified cell of a sweep."""

    pipeline: tuple[TransformSpec, ...]
    strategy: StrategySpec
    mode: ModeSpec
    model: ModelSpec
    cv: CVSpec = CVSpec()
    preprocessing: str = "custom"

    @property
    def horizon(self) -> int:
        return self.strategy.horizon

    @property
    def history(self) -> int:
        return next(s for s in self.pipeline if s.kind == "lag").params["history"]

    @property
    def datetime_features(self) -> bool:
        return any(s.kind == "datetime_features" for s in self.pipeline)

    @property
    def id_features(self) -> bool:
        return any(s.kind == "id_features" for s in self.pipeline)

    def settings(self) -> dict[str, str]:
        return {
            "model": self.model.label,
            "strategy": self.strategy.label,
            "mode": self.mode.label,
            "preprocessing": self.preprocessing,
            "datetime_features": str(self.datetime_features),
            "id_features": str(self.id_features),
        }

    def min_train_length(self) -> int:
        """Shortest training series that yields at least one row."""
        dropped = PipelineState(self.pipeline).n_dropped
        longest_target = self.strategy.horizon if self.strategy.kind != "recursive" else self.strategy.model_horizon
        return self.history + dropped + longest_target


@dataclass
class FoldResult:
    index: int
    score: Score


@dataclass
class CVEnsemble:
    """Forecasters fitted per fold; forecasts are averaged in original units."""

    forecasters: list[Forecaster]
    folds: list[FoldResult]
    plan: SplitPlan | None

    @property
    def val_mae(self) -> float:
        return float(np.mean([f.score.mae for f in self.folds])) if self.folds else math.nan

    def forecast(self, frame: LongFrame, origin: int | None = None) -> dict[str, np.ndarray]:
        outs = [fc.forecast(frame, origin) for fc in self.forecasters]
        # mean written as first + mean offset, so identical folds reproduce a single fold exactly
        return {sid: outs[0][sid] + np.mean([o[sid] - outs[0][sid] for o in outs], axis=0) for sid in outs[0]}


def _truth(frame: LongFrame) -> dict[str, np.ndarray]:
    return {s.id: np.asarray(s.target) for s in frame}


def cv_fit_ensemble(frame: LongFrame, config: ExperimentConfig, plan: SplitPlan | None = None) -> CVEnsemble:
    """Fit one forecaster per fold and score each on its validation window.

    Each fold's validation window also drives early stopping for models that
    support it. With ``n_folds == 0`` a single forecaster is fitted on the
    whole frame (early stopping then holds out the last 20% internally).
    """
    if plan is None and config.cv.n_folds == 0:
        fc = fit_forecaster(frame, config.pipeline, config.strategy, config.mode, config.model)
        return CVEnsemble([fc], [], None)
    if plan is None:
        plan = make_cv_splits(frame, config.cv.scheme, config.cv.n_folds, config.horizon,
                              config.min_train_length(), config.cv.window)
    forecasters, folds = [], []
    for k in range(plan.n_folds):
        train, val = plan.fold(frame, k)
        fc = fit_forecaster(train, config.pipeline, config.strategy, config.mode, config.model,
                            validation_frame=val)
        pred = fc.forecast(train)
        folds.append(FoldResult(k, score_forecasts(pred, _truth(val))))
        forecasters.append(fc)
    return CVEnsemble(forecasters, folds, plan)


@dataclass
class CellResult:
    config: ExperimentConfig
    folds: list[FoldResult]
    test: Score
    forecasts: dict[str, np.ndarray]
    timestamps: dict[str, np.ndarray]
    truth: dict[str, np.ndarray]

    @property
    def val_mae(self) -> float:
        return float(np.mean([f.score.mae for f in self.folds])) if self.folds else math.nan

    @property
    def test_mae(self) -> float:
        return self.test.mae


def evaluate(frame: LongFrame, config: ExperimentConfig) -> CellResult:
    """Hold out the last ``horizon`` points, cross-validate on the rest, score the ensemble."""
    train, test = temporal_split(frame, config.horizon)
    ens = cv_fit_ensemble(train, config)
    pred = ens.forecast(train)
    truth = _truth(test)
    return CellResult(config, ens.folds, score_forecasts(pred, truth), pred,
                      forecast_timestamps(train, config.horizon), truth)


# -- backtest -----------------------------------------------------------------


@dataclass
class BacktestWindow:
    index: int
    origins: dict[str, int]  # last training timestamp per series
    result: CellResult


@dataclass
class BacktestResult:
    windows: list[BacktestWindow]

    @property
    def mae(self) -> float:
        return float(np.mean([w.result.test.mae for w in self.windows]))

    @property
    def mse(self) -> float:
        return float(np.mean([w.result.test.mse for w in self.windows]))


def backtest(frame: LongFrame, config: ExperimentConfig, n_windows: int = 1, stride: int | None = None) -> BacktestResult:
    """Refit from scratch at ``n_windows`` origins and score each ``horizon`` ahead.

    Window ``i`` of a series with ``T`` points trains on its first
    ``T - H - (n_windows - 1 - i) * stride`` points (CV runs inside that part)
    and is scored on the next ``H``.
    """
    H = config.horizon
    stride = H if stride is None else stride
    if n_windows < 1 or stride < 1:
        raise ConfigError("backtest needs n_windows >= 1 and stride >= 1")
    need = config.min_train_length()
    if config.cv.n_folds:
        need = max(need, config.min_train_length() + config.cv.n_folds * H)
    for s in frame:
        first = len(s) - H - (n_windows - 1) * stride
        if first < need:
            raise TooShortForBacktest(
                f"series {s.id!r} has {len(s)} points; {n_windows} windows with stride {stride} "
                f"leave {max(first, 0)} training points at the first origin, need {need}"
            )
    windows = []
    for i in range(n_windows):
        cut = []
        origins = {}
        for s in frame:
            end = len(s) - (n_windows - 1 - i) * stride
            cut.append(s.slice(0, end))
            origins[s.id] = int(s.timestamps[end - H - 1])
        windows.append(BacktestWindow(i, origins, evaluate(frame.with_series(cut), config)))
    return BacktestResult(windows)


# -- rank aggregation ---------------------------------------------------------------


@dataclass(frozen=True)
class CellRecord:
    """What rank aggregation needs from a finished cell."""

    settings: Mapping[str, str]
    test_mae: float
    val_mae: float = math.nan

    @classmethod
    def from_result(cls, result: CellResult) -> "CellRecord":
        return cls(result.config.settings(), result.test_mae, result.val_mae)


@dataclass(frozen=True)
class RankRow:
    scope: str
    hyperparameter: str
    value: str
    mean_rank: float
    median_mae: float
    n_groups: int


def group_ranks(cells: Sequence[CellRecord], hyperparameter: str,
                metric: str = "test_mae") -> list[tuple[tuple, dict[str, float], list[CellRecord]]]:
    """Groups of cells equal in every other setting, with average-tie ranks by ``metric``."""
    others = [k for k in SETTINGS if k != hyperparameter]
    groups: dict[tuple, list[CellRecord]] = defaultdict(list)
    for c in cells:
        groups[tuple(c.settings[k] for k in others)].append(c)
    out = []
    for key in sorted(groups):
        members = groups[key]
        values = [c.settings[hyperparameter] for c in members]
        if len(set(values)) != len(values):
            raise DegenerateGroup(f"group {key} has repeated {hyperparameter} values {values}")
        ranks = rankdata([getattr(c, metric) for c in members], method="average")
        out.append((key, {v: float(r) for v, r in zip(values, ranks)}, members))
    return out


def rank_table(
    cells: Sequence[CellRecord],
    hyperparameter: str,
    scope: str = "overall",
    strict: bool = False,
    metric: str = "test_mae",
) -> list[RankRow]:
    """Mean rank and median MAE per value of ``hyperparameter``.

    Cells are compared only against cells that differ in ``hyperparameter``
    alone. Groups with a single cell cannot be ranked: ``strict`` raises,
    otherwise they are dropped. If the hyperparameter takes one value in the
    whole set, that value gets a single row with rank 1.
    """
    if not cells:
        return []
    values = sorted({c.settings[hyperparameter] for c in cells})
    if len(values) == 1:
        maes = [getattr(c, metric) for c in cells]
        return [RankRow(scope, hyperparameter, values[0], 1.0, float(np.median(maes)), len(cells))]
    ranks: dict[str, list[float]] = defaultdict(list)
    maes: dict[str, list[float]] = defaultdict(list)
    for key, r, members in group_ranks(cells, hyperparameter, metric):
        if len(members) < 2:
            if strict:
                raise DegenerateGroup(f"{hyperparameter}: group {key} has a single cell")
            continue
        for c in members:
            v = c.settings[hyperparameter]
            ranks[v].append(r[v])
            maes[v].append(getattr(c, metric))
    rows = []
    for v in values:
        if ranks[v]:
            rows.append(RankRow(scope, hyperparameter, v, float(np.mean(ranks[v])),
                                float(np.median(maes[v])), len(ranks[v])))
        else:
            rows.append(RankRow(scope, hyperparameter, v, math.nan, math.nan, 0))
    return rows


def rank_tables(cells: Sequence[CellRecord], hyperparameters: Iterable[str] = SETTINGS[1:],
                metric: str = "test_mae") -> list[RankRow]:
    """Rank tables per model plus an overall scope that pools every model."""
    models = sorted({c.settings["model"] for c in cells})
    scopes = [(m, [c for c in cells if c.settings["model"] == m]) for m in models]
    scopes.append(("overall", list(cells)))
    rows = []
    for hp in hyperparameters:
        for name, subset in scopes:
            rows += rank_table(subset, hp, scope=name, metric=metric)
    return rows


@dataclass(frozen=True)
class LeaderRow:
    rank: int
    model: str
    strategy: str
    mae: float


def leaderboard(cells: Sequence[CellRecord], k: int = 10) -> tuple[list[LeaderRow], list[LeaderRow]]:
    """Best ``k`` model-strategy combinations by test MAE and, separately, by validation MAE.

    A combination's score is its best cell. Ties break on the other split's
    MAE, then on the names.
    """
    best: dict[tuple[str, str], tuple[float, float]] = {}
    for c in cells:
        key = (c.settings["model"], c.settings["strategy"])
        test, val = best.get(key, (math.inf, math.inf))
        best[key] = (min(test, c.test_mae), min(val, c.val_mae) if not math.isnan(c.val_mae) else val)

    def board(primary: int):
        items = [(v[primary], v[1 - primary], key) for key, v in best.items() if math.isfinite(v[primary])]
        items.sort()
        return [LeaderRow(i + 1, key[0], key[1], score) for i, (score, _, key) in enumerate(items[:k])]

    return board(0), board(1)


@dataclass
class RunReport:
    cells: list[CellResult]
    config_hash: str = ""
    seed: int = 0
    skipped: list[tuple[str, str, str]] = field(default_factory=list)  # (cell id, reason code, message)

    def records(self) -> list[CellRecord]:
        return [CellRecord.from_result(c) for c in self.cells]

    def rank_tables(self) -> list[RankRow]:
        return rank_tables(self.records())

    def leaderboard(self, k: int = 10):
        return leaderboard(self.records(), k)
