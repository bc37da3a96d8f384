"""Multi-step-ahead strategies under global or multivariate training.

A strategy decides what each training row's target block looks like and
how a forecast of ``horizon`` points is assembled at inference:

``recursive``       one model emitting ``model_horizon`` points; iterated,
                    feeding its own predictions back into the history.
                    ``model_horizon > 1`` is the Rec-MIMO hybrid.
``direct``          ``horizon / model_horizon`` models, model ``k`` owning
                    steps ``k*MH+1 .. (k+1)*MH`` from a shared input window.
``mimo``            one model emitting the whole horizon at once.
``flat_wide_mimo``  the MIMO rows flattened to one scalar target per row,
                    with the horizon index added as an input feature.

In global mode rows from every series are pooled into one sample set. In
multivariate mode (channel mixing) each row holds the lag windows of all
series for one time window and predicts all of them; this needs aligned
series.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Frequency, LongFrame, Series, check_alignment, concat_frames
from .errors import (
    ConfigError,
    InsufficientHistory,
    InvalidStrategySpec,
    MissingCovariates,
    NotAligned,
    UnknownSeries,
)
from .models import FitContext, ModelSpec, TrainedModel, fit_model
from .transforms import (
    FeatureColumn,
    FeatureMatrix,
    LKNState,
    PipelineState,
    TargetColumn,
    TransformSpec,
    inverse_pipeline,
)

log = logging.getLogger(__name__)

STRATEGY_KINDS = ("recursive", "direct", "mimo", "flat_wide_mimo")
_LABELS = {"recursive": "Recursive", "direct": "Direct", "mimo": "MIMO", "flat_wide_mimo": "FlatWideMIMO"}


def strategy_label(kind: str, model_horizon: int) -> str:
    """Display name, e.g. ``Recursive (MH=6)``; MH is shown only where it varies."""
    if kind in ("recursive", "direct"):
        return f"{_LABELS[kind]} (MH={model_horizon})"
    return _LABELS[kind]


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    horizon: int
    model_horizon: int | None = None
    horizon_encoding: str = "raw"  # flat_wide_mimo only: raw | onehot

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise InvalidStrategySpec(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_KINDS}")
        H = self.horizon
        if not isinstance(H, int) or H < 1:
            raise InvalidStrategySpec(f"horizon must be a positive integer, got {H!r}")
        mh = self.model_horizon
        if mh is None:
            mh = 1 if self.kind == "recursive" else H
        if not isinstance(mh, int) or mh < 1:
            raise InvalidStrategySpec(f"model_horizon must be a positive integer, got {mh!r}")
        if self.kind in ("mimo", "flat_wide_mimo") and mh != H:
            raise InvalidStrategySpec(f"{self.kind} needs model_horizon == horizon ({H}), got {mh}")
        if self.kind == "recursive" and mh > H:
            raise InvalidStrategySpec(f"recursive needs model_horizon <= horizon, got {mh} > {H}")
        if self.kind == "direct" and H % mh:
            raise InvalidStrategySpec(f"direct needs horizon ({H}) divisible by model_horizon ({mh})")
        if self.horizon_encoding not in ("raw", "onehot"):
            raise InvalidStrategySpec("horizon_encoding must be raw or onehot")
        object.__setattr__(self, "model_horizon", mh)

    @property
    def n_models(self) -> int:
        return self.horizon // self.model_horizon if self.kind == "direct" else 1

    @property
    def n_iterations(self) -> int:
        return math.ceil(self.horizon / self.model_horizon) if self.kind == "recursive" else 1

    @property
    def label(self) -> str:
        return strategy_label(self.kind, self.model_horizon)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "horizon": self.horizon, "model_horizon": self.model_horizon}
        if self.kind == "flat_wide_mimo":
            d["horizon_encoding"] = self.horizon_encoding
        return d


@dataclass(frozen=True)
class ModeSpec:
    mode: str = "global"
    channel_handling: str = "mixing"

    def __post_init__(self):
        if self.mode not in ("global", "multivariate"):
            raise ConfigError(f"mode must be global or multivariate, got {self.mode!r}")
        if self.channel_handling not in ("mixing", "independence"):
            raise ConfigError(f"channel_handling must be mixing or independence, got {self.channel_handling!r}")

    @classmethod
    def parse(cls, name: str) -> "ModeSpec":
        aliases = {
            "global": cls("global"),
            "multivariate": cls("multivariate", "mixing"),
            "multivariate_cm": cls("multivariate", "mixing"),
            "multivariate_ci": cls("multivariate", "independence"),
        }
        if name not in aliases:
            raise ConfigError(f"unknown mode {name!r}; expected one of {sorted(aliases)}")
        return aliases[name]

    @property
    def name(self) -> str:
        if self.mode == "global":
            return "global"
        return "multivariate_cm" if self.channel_handling == "mixing" else "multivariate_ci"

    @property
    def label(self) -> str:
        return {"global": "Global", "multivariate_cm": "Multivariate CM",
                "multivariate_ci": "Multivariate CI"}[self.name]

    @property
    def requires_alignment(self) -> bool:
        return self.mode == "multivariate"

    @property
    def mixes_channels(self) -> bool:
        # channel independence with classical models trains exactly like global mode
        return self.mode == "multivariate" and self.channel_handling == "mixing"


# -- dataset shaping ----------------------------------------------------------


def flatten_wide(matrix: FeatureMatrix, horizon: int, encoding: str = "raw") -> FeatureMatrix:
    """MIMO rows -> ``N * horizon`` rows with one horizon index per row."""
    n = matrix.n_rows
    s_count = len({t.series_index for t in matrix.targets})
    X = np.repeat(matrix.X, horizon, axis=0)
    h = np.tile(np.arange(1, horizon + 1, dtype=float), n)
    if encoding == "raw":
        extra = h[:, None]
        cols = (FeatureColumn("horizon", "horizon", "index"),)
    else:
        extra = (h[:, None] == np.arange(1, horizon + 1)[None, :]).astype(float)
        cols = tuple(FeatureColumn(f"horizon={k}", "horizon", "onehot") for k in range(1, horizon + 1))
    Y = matrix.Y.reshape(n, s_count, horizon).transpose(0, 2, 1).reshape(n * horizon, s_count)
    rows = np.repeat(np.arange(n), horizon)
    lkn = matrix.lkn
    if lkn is not None:
        lkn = LKNState(lkn.mode, lkn.groups, lkn.anchors[rows], lkn.targets)
    return FeatureMatrix(
        np.hstack([X, extra]), Y, matrix.columns + cols,
        tuple(TargetColumn(None, s) for s in range(s_count)),
        matrix.anchors.take(rows), matrix.series_ids, matrix.step, lkn,
    )


def _offsets(strategy: StrategySpec, segment: int = 0) -> list[int]:
    if strategy.kind == "recursive":
        return list(range(1, strategy.model_horizon + 1))
    if strategy.kind == "direct":
        mh = strategy.model_horizon
        return list(range(segment * mh + 1, (segment + 1) * mh + 1))
    return list(range(1, strategy.horizon + 1))


def _check_mode(frame: LongFrame, mode: ModeSpec) -> None:
    if mode.requires_alignment and not check_alignment(frame):
        raise NotAligned(f"{mode.label} mode needs every series on the same timestamps")


def build_strategy_dataset(
    frame: LongFrame,
    pipeline: PipelineState,
    strategy: StrategySpec,
    mode: ModeSpec,
) -> FeatureMatrix | list[FeatureMatrix]:
    """Training matrix for ``strategy``; a list with one matrix per segment for ``direct``."""
    _check_mode(frame, mode)
    states = [pipeline.series_state(s) for s in frame]
    mv = mode.mixes_channels

    def build(offsets):
        return pipeline.build(states, offsets, multivariate=mv)

    if strategy.kind == "direct":
        return [build(_offsets(strategy, k)) for k in range(strategy.n_models)]
    fm = build(_offsets(strategy))
    if strategy.kind == "flat_wide_mimo":
        fm = flatten_wide(fm, strategy.horizon, strategy.horizon_encoding)
    return fm


# -- fitted bundle ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Forecaster:
    strategy: StrategySpec
    mode: ModeSpec
    pipeline: PipelineState
    models: tuple[TrainedModel, ...]
    schema: tuple[FeatureColumn, ...]
    series_ids: tuple[str, ...]

    @property
    def horizon(self) -> int:
        return self.strategy.horizon

    def forecast(self, frame: LongFrame, origin: int | None = None) -> dict[str, np.ndarray]:
        return forecast(self, frame, origin)


def _row_extent(fm: FeatureMatrix) -> np.ndarray:
    """Timestamp of the last target each row references."""
    offs = [t.offset for t in fm.targets]
    if any(o is None for o in offs):
        hcols = [i for i, c in enumerate(fm.columns) if c.role == "horizon"]
        if len(hcols) == 1:
            h = fm.X[:, hcols[0]].astype(np.int64)
        else:
            h = np.argmax(fm.X[:, hcols], axis=1) + 1
        return fm.anchors.timestamp + h * fm.step
    return fm.anchors.timestamp + max(offs) * fm.step


def _row_cutoffs(fm: FeatureMatrix, cutoffs: Mapping[str, int]) -> np.ndarray:
    return np.array([cutoffs[s] for s in fm.anchors.series[:, 0]], dtype=np.int64)


def _early_stopping_split(
    fm: FeatureMatrix, cutoffs: Mapping[str, int]
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Rows whose targets end by the cutoff train; rows anchored at or after it validate."""
    cut = _row_cutoffs(fm, cutoffs)
    train = _row_extent(fm) <= cut
    val = fm.anchors.timestamp >= cut
    return fm.take(np.flatnonzero(train)), fm.take(np.flatnonzero(val))


def _uses_validation(model: ModelSpec) -> bool:
    return model.kind == "gbdt" and model.params.get("early_stopping_rounds") is not None


def fit_forecaster(
    frame: LongFrame,
    pipeline: Sequence[TransformSpec | Mapping] | PipelineState,
    strategy: StrategySpec,
    mode: ModeSpec,
    model: ModelSpec,
    validation_frame: LongFrame | None = None,
    holdout_fraction: float = 0.2,
) -> Forecaster:
    """Fit the pipeline on ``frame``, shape the strategy dataset(s), fit the model(s).

    Models that early-stop (gbdt) validate on rows anchored inside
    ``validation_frame`` (the points right after ``frame``) when given,
    otherwise on the last ``holdout_fraction`` of each series.
    """
    _check_mode(frame, mode)
    state = pipeline if isinstance(pipeline, PipelineState) else PipelineState.fit(pipeline, frame)
    mats = build_strategy_dataset(frame, state, strategy, mode)
    mats = mats if isinstance(mats, list) else [mats]
    series_ids = frame.ids

    val_mats: list[FeatureMatrix | None] = [None] * len(mats)
    if _uses_validation(model):
        if validation_frame is not None:
            extended = concat_frames(frame, validation_frame)
            cutoffs = {s.id: int(s.timestamps[-1]) for s in frame}
            ext = build_strategy_dataset(extended, state, strategy, mode)
            ext = ext if isinstance(ext, list) else [ext]
            val_mats = [m.take(np.flatnonzero(m.anchors.timestamp >= _row_cutoffs(m, cutoffs))) for m in ext]
        else:
            cutoffs = {}
            for s in frame:
                pos = max(1, int(math.floor(len(s) * (1 - holdout_fraction))))
                cutoffs[s.id] = int(s.timestamps[pos - 1])
            split = [_early_stopping_split(m, cutoffs) for m in mats]
            if all(tr.n_rows >= 2 * model.params["min_samples_leaf"] and va.n_rows > 0 for tr, va in split):
                mats = [tr for tr, _ in split]
                val_mats = [va for _, va in split]
            else:
                log.info("not enough rows for an early-stopping holdout; training without one")

    models = []
    for fm, vm in zip(mats, val_mats):
        ctx = FitContext(fm.columns, fm.targets, fm.series_ids)
        validation = (vm.X, vm.Y) if vm is not None and vm.n_rows else None
        models.append(fit_model(model, fm.X, fm.Y, ctx, validation))
    return Forecaster(strategy, mode, state, tuple(models), mats[0].columns, series_ids)


# -- inference ----------------------------------------------------------------


def _split_history(fc: Forecaster, frame: LongFrame, origin: int | None):
    hist, future = [], {}
    for s in frame:
        if origin is None:
            h = s
        else:
            h = s.until(origin)
        hist.append(h)
        future[s.id] = s.slice(len(h))
    if fc.mode.mixes_channels:
        ids = tuple(h.id for h in hist)
        if ids != fc.series_ids:
            raise UnknownSeries(f"multivariate forecaster was fitted on {fc.series_ids}, frame has {ids}")
        first = hist[0].timestamps
        if any(not np.array_equal(first, h.timestamps) for h in hist[1:]):
            raise NotAligned("multivariate forecasting needs aligned histories")
    for h in hist:
        if len(h) < fc.pipeline.min_history:
            raise InsufficientHistory(
                f"series {h.id!r} has {len(h)} points of history, needs {fc.pipeline.min_history}"
            )
    return hist, future


def _inference_matrix(fc: Forecaster, hist: Sequence[Series]) -> FeatureMatrix:
    states = [fc.pipeline.series_state(h) for h in hist]
    idx = [np.array([len(h) - 1]) for h in hist]
    if fc.mode.mixes_channels:
        idx = idx[:1]
    fm = fc.pipeline.build(states, [], multivariate=fc.mode.mixes_channels, anchor_index=idx)
    expected = tuple(c for c in fc.schema if c.role != "horizon")
    if fm.columns != expected:
        raise ConfigError("inference feature layout does not match the fitted schema")
    return fm


def _blocks(pred: np.ndarray, n_rows: int, n_series: int, width: int) -> np.ndarray:
    # outputs are series-major: all offsets of series 0, then series 1, ...
    return pred.reshape(n_rows, n_series, width)


def _collect(fc: Forecaster, hist: Sequence[Series], out: np.ndarray) -> dict[str, np.ndarray]:
    if fc.mode.mixes_channels:
        return {sid: out[0, s] for s, sid in enumerate(fc.series_ids)}
    return {h.id: out[i, 0] for i, h in enumerate(hist)}


def forecast_batch(fc: Forecaster, frame: LongFrame, origin: int | None = None) -> dict[str, np.ndarray]:
    """MIMO, direct and flat-wide-MIMO inference from the last history window."""
    if fc.strategy.kind not in ("mimo", "direct", "flat_wide_mimo"):
        raise InvalidStrategySpec(f"forecast_batch does not handle {fc.strategy.kind!r}")
    hist, _ = _split_history(fc, frame, origin)
    fm = _inference_matrix(fc, hist)
    n = fm.n_rows
    s_count = fm.anchors.last_known.shape[1]
    H = fc.strategy.horizon
    if fc.strategy.kind == "mimo":
        pred = _blocks(fc.models[0].predict(fm.X), n, s_count, H)
    elif fc.strategy.kind == "direct":
        mh = fc.strategy.model_horizon
        pred = np.concatenate([_blocks(m.predict(fm.X), n, s_count, mh) for m in fc.models], axis=2)
    else:
        flat = flatten_wide(replace(fm, Y=np.zeros((n, s_count * H)),
                                    targets=tuple(TargetColumn(o, s) for s in range(s_count) for o in range(1, H + 1))),
                            H, fc.strategy.horizon_encoding)
        p = fc.models[0].predict(flat.X)  # (n*H, S)
        pred = p.reshape(n, H, s_count).transpose(0, 2, 1)
    out = inverse_pipeline(fc.pipeline, pred, fm.anchors)
    return _collect(fc, hist, out)


def _extend(h: Series, future: Series, values: np.ndarray, step: int, exog_names: Sequence[str]) -> Series:
    """Append predicted ``values`` to ``h``; exogenous values come from ``future``."""
    ts = h.timestamps[-1] + step * np.arange(1, len(values) + 1, dtype=np.int64)
    pos = np.searchsorted(future.timestamps, ts)
    found = pos < len(future)
    found[found] = future.timestamps[pos[found]] == ts[found]
    exog = {}
    for name in exog_names:
        src = future.exog.get(name)
        vals = src[pos[found]] if src is not None else np.array([])
        if src is None or not found.all() or np.isnan(vals).any():
            raise MissingCovariates(
                f"recursive forecast of series {h.id!r} needs exogenous {name!r} at timestamps {ts.tolist()}"
            )
        exog[name] = np.concatenate([h.exog.get(name, np.full(len(h), np.nan)), vals])
    return Series(h.id, np.concatenate([h.timestamps, ts]), np.concatenate([h.target, values]), exog)


def forecast_recursive(fc: Forecaster, frame: LongFrame, origin: int | None = None) -> dict[str, np.ndarray]:
    """Iterate the model, appending each predicted block to the history.

    Each iteration rebuilds the feature row from the extended history, so lags
    shift, calendar features advance and last-known normalization re-anchors
    on the newest (possibly predicted) value. Predicted blocks are mapped back
    to original units before being appended; the last block is truncated to
    reach exactly ``horizon`` points.
    """
    if fc.strategy.kind != "recursive":
        raise InvalidStrategySpec(f"forecast_recursive does not handle {fc.strategy.kind!r}")
    hist, future = _split_history(fc, frame, origin)
    H, mh = fc.strategy.horizon, fc.strategy.model_horizon
    step = frame.frequency.step
    exog_names = fc.pipeline.exog_names
    chunks = []
    done = 0
    model = fc.models[0]
    for _ in range(fc.strategy.n_iterations):
        fm = _inference_matrix(fc, hist)
        n, s_count = fm.anchors.last_known.shape
        pred = _blocks(model.predict(fm.X), n, s_count, mh)
        raw = inverse_pipeline(fc.pipeline, pred, fm.anchors)
        take = min(mh, H - done)
        chunks.append(raw[:, :, :take])
        done += take
        if done >= H:
            break
        if fc.mode.mixes_channels:
            hist = [_extend(h, future[h.id], raw[0, s], step, exog_names) for s, h in enumerate(hist)]
        else:
            hist = [_extend(h, future[h.id], raw[i, 0], step, exog_names) for i, h in enumerate(hist)]
    out = np.concatenate(chunks, axis=2)
    return _collect(fc, hist, out)


def forecast(fc: Forecaster, frame: LongFrame, origin: int | None = None) -> dict[str, np.ndarray]:
    """Forecast ``horizon`` points after ``origin`` (default: each series' last timestamp).

    Target values after ``origin`` are ignored; exogenous values after it are
    read only by recursive strategies, as known future covariates.
    """
    if fc.strategy.kind == "recursive":
        return forecast_recursive(fc, frame, origin)
    return forecast_batch(fc, frame, origin)


def forecast_timestamps(frame: LongFrame, horizon: int, origin: int | None = None) -> dict[str, np.ndarray]:
    step = frame.frequency.step
    out = {}
    for s in frame:
        last = int(s.until(origin).timestamps[-1]) if origin is not None else int(s.timestamps[-1])
        out[s.id] = last + step * np.arange(1, horizon + 1, dtype=np.int64)
    return out


def write_forecasts_csv(
    path: str | Path,
    forecasts: Mapping[str, np.ndarray],
    timestamps: Mapping[str, np.ndarray],
    frequency: Frequency,
    actual: Mapping[str, np.ndarray] | None = None,
) -> None:
    """Long-format forecast table: ``series_id, timestamp, prediction`` (plus ``actual`` if given)."""
    header = ["series_id", "timestamp", "prediction"] + (["actual"] if actual is not None else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for sid in sorted(forecasts):
            for i, (t, p) in enumerate(zip(timestamps[sid], forecasts[sid])):
                row = [sid, frequency.format(int(t)), repr(float(p))]
                if actual is not None:
                    row.append(repr(float(actual[sid][i])))
                w.writerow(row)
