"""Invertible preprocessing and long-to-wide featurization.

Three transform families, applied in this order:

* Series-to-Series: ``standard_scaler`` and ``difference_normalizer`` act on
  each series before any lagging. They can target the feature copy of the
  series, the target copy, or both; each copy gets its own fitted chain.
* Series-to-Features: ``datetime_features``, ``id_features`` and the single
  ``lag`` transform turn long series into wide rows (a :class:`FeatureMatrix`).
* Features-to-Features: ``last_known_normalizer`` rescales every wide row by
  its most recent known target value.

Target-side transforms are all invertible; :func:`inverse_pipeline` undoes
them in reverse order using per-row anchors stored in the matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import Frequency, LongFrame, Series
from .errors import (
    ConfigError,
    MissingAnchor,
    OrdinalTimestamps,
    SeriesTooShort,
    TransformOrderError,
    UnknownSeries,
    ZeroAnchor,
    ZeroDivision,
)

log = logging.getLogger(__name__)

STD_CLAMP = 1e-12

SERIES_KINDS = ("standard_scaler", "difference_normalizer")
FEATURE_KINDS = ("datetime_features", "id_features")
NORMALIZER_KINDS = ("difference_normalizer", "last_known_normalizer")
TRANSFORM_KINDS = SERIES_KINDS + FEATURE_KINDS + ("lag", "last_known_normalizer")
DATETIME_PARTS = ("year", "month", "week", "day", "weekday")

_PARAM_DEFAULTS: dict[str, dict[str, Any]] = {
    "standard_scaler": {"pooled": False, "exog": False},
    "difference_normalizer": {},
    "last_known_normalizer": {"exog": False},
    "datetime_features": {"parts": ["month", "week"], "lags": 1},
    "id_features": {"encoding": "label"},
    "lag": {"history": 96},
}
_SHORT = {"standard_scaler": "SS", "difference_normalizer": "DN", "last_known_normalizer": "LKN"}


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    mode: str | None = None
    apply_to: str = "both"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ConfigError(f"unknown transform kind {self.kind!r}; expected one of {TRANSFORM_KINDS}")
        if self.kind in NORMALIZER_KINDS:
            mode = self.mode or "delta"
            if mode not in ("delta", "ratio"):
                raise ConfigError(f"{self.kind}: mode must be delta or ratio, got {self.mode!r}")
            object.__setattr__(self, "mode", mode)
        elif self.mode is not None:
            raise ConfigError(f"{self.kind}: mode is only valid for normalizers")
        if self.apply_to not in ("features", "target", "both"):
            raise ConfigError(f"{self.kind}: apply_to must be features, target or both")
        unknown = set(self.params) - set(_PARAM_DEFAULTS[self.kind])
        if unknown:
            raise ConfigError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        params = {**_PARAM_DEFAULTS[self.kind], **self.params}
        if self.kind == "lag" and (not isinstance(params["history"], int) or params["history"] < 1):
            raise ConfigError("lag: history must be a positive integer")
        if self.kind == "datetime_features":
            params["parts"] = list(params["parts"])
            bad = [p for p in params["parts"] if p not in DATETIME_PARTS]
            if bad:
                raise ConfigError(f"datetime_features: unknown parts {bad}; expected subset of {DATETIME_PARTS}")
            if not isinstance(params["lags"], int) or params["lags"] < 1:
                raise ConfigError("datetime_features: lags must be a positive integer")
        if self.kind == "id_features" and params["encoding"] not in ("label", "onehot"):
            raise ConfigError("id_features: encoding must be label or onehot")
        object.__setattr__(self, "params", params)

    @property
    def label(self) -> str:
        return _SHORT.get(self.kind, self.kind)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.mode is not None:
            d["mode"] = self.mode
        if self.kind in SERIES_KINDS + ("last_known_normalizer",):
            d["apply_to"] = self.apply_to
        if self.params:
            d["params"] = dict(self.params)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransformSpec":
        d = dict(d)
        return cls(d.pop("kind"), d.pop("mode", None), d.pop("apply_to", "both"), d.pop("params", {}), **d)


def check_order(specs: Sequence[TransformSpec]) -> None:
    """Series transforms and feature generators, then one lag, then LKN."""
    lags = [i for i, s in enumerate(specs) if s.kind == "lag"]
    if len(lags) != 1:
        raise TransformOrderError(f"pipeline needs exactly one lag transform, found {len(lags)}")
    at = lags[0]
    for i, s in enumerate(specs):
        if s.kind in SERIES_KINDS + FEATURE_KINDS and i > at:
            raise TransformOrderError(f"{s.kind} must come before the lag transform")
        if s.kind == "last_known_normalizer" and i < at:
            raise TransformOrderError("last_known_normalizer must come after the lag transform")
    for kind in FEATURE_KINDS + ("last_known_normalizer",):
        if sum(s.kind == kind for s in specs) > 1:
            raise TransformOrderError(f"{kind} may appear at most once")


# -- Series-to-Series ---------------------------------------------------------


class _Scaler:
    kind = "standard_scaler"

    def __init__(self, pooled: bool = False, exog: bool = False):
        self.pooled = pooled
        self.exog = exog
        self.params: dict[str, tuple[float, float]] = {}
        self.exog_params: dict[str, dict[str, tuple[float, float]]] = {}

    @staticmethod
    def _stats(x: np.ndarray) -> tuple[float, float]:
        x = x[np.isfinite(x)]
        if len(x) == 0:
            return 0.0, 1.0
        mean = float(np.mean(x))
        std = float(np.std(x))
        return mean, (std if std >= STD_CLAMP else 1.0)

    def fit(self, values: Mapping[str, np.ndarray], exog: Mapping[str, Mapping[str, np.ndarray]] | None = None):
        if self.pooled:
            pooled = self._stats(np.concatenate(list(values.values())))
            self.params = {sid: pooled for sid in values}
            self.params[None] = pooled
        else:
            self.params = {sid: self._stats(v) for sid, v in values.items()}
        if self.exog and exog:
            names = sorted({n for cols in exog.values() for n in cols})
            if self.pooled:
                pooled_ex = {n: self._stats(np.concatenate([cols[n] for cols in exog.values() if n in cols]))
                             for n in names}
                self.exog_params = {sid: pooled_ex for sid in exog}
                self.exog_params[None] = pooled_ex
            else:
                self.exog_params = {sid: {n: self._stats(c) for n, c in cols.items()} for sid, cols in exog.items()}
        return self

    def _lookup(self, table, sid):
        if sid in table:
            return table[sid]
        if self.pooled and None in table:
            return table[None]
        raise UnknownSeries(f"series {sid!r} was not seen when the scaler was fitted")

    def forward(self, sid: str, x: np.ndarray, timestamps=None) -> np.ndarray:
        mean, std = self._lookup(self.params, sid)
        return (x - mean) / std

    def inverse(self, sid: str, y: np.ndarray, level=None) -> np.ndarray:
        mean, std = self._lookup(self.params, sid)
        return y * std + mean

    def forward_exog(self, sid: str, name: str, x: np.ndarray) -> np.ndarray:
        if not self.exog:
            return x
        cols = self._lookup(self.exog_params, sid)
        if name not in cols:
            return x
        mean, std = cols[name]
        return (x - mean) / std

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pooled": self.pooled,
                "params": {str(k): list(v) for k, v in self.params.items()}}


def _forward(tr, sid, x, timestamps, fmt):
    if isinstance(tr, _Differencer):
        return tr.forward(sid, x, timestamps, fmt)
    return tr.forward(sid, x, timestamps)


class _Differencer:
    kind = "difference_normalizer"
    drops = 1

    def __init__(self, mode: str = "delta"):
        self.mode = mode

    def fit(self, values, exog=None):
        return self

    def forward(self, sid: str, x: np.ndarray, timestamps=None, fmt=str) -> np.ndarray:
        out = np.full(len(x), np.nan)
        if len(x) < 2:
            return out
        prev, cur = x[:-1], x[1:]
        if self.mode == "delta":
            out[1:] = cur - prev
        else:
            zero = np.flatnonzero(prev == 0)
            if len(zero):
                i = int(zero[0])
                ts = int(timestamps[i]) if timestamps is not None else None
                where = f" at {fmt(ts)}" if ts is not None else ""
                raise ZeroDivision(
                    f"ratio difference: series {sid!r} has a zero value{where}", sid, ts
                )
            with np.errstate(invalid="ignore"):
                out[1:] = cur / prev
        return out

    def inverse(self, sid: str, y: np.ndarray, level) -> np.ndarray:
        """Undo along the last axis, starting from ``level`` (the value just before)."""
        level = np.asarray(level, dtype=float)
        if np.any(~np.isfinite(level)):
            raise MissingAnchor(f"difference normalizer inverse needs a finite anchor level for series {sid!r}")
        if self.mode == "delta":
            return level[..., None] + np.cumsum(y, axis=-1)
        return level[..., None] * np.cumprod(y, axis=-1)

    def forward_exog(self, sid, name, x):
        return x


def _make_series_transform(spec: TransformSpec):
    if spec.kind == "standard_scaler":
        return _Scaler(pooled=bool(spec.params["pooled"]), exog=bool(spec.params["exog"]))
    return _Differencer(spec.mode)


def standard_scale(frame: LongFrame, fit_on: LongFrame | None = None, pooled: bool = False):
    """Per-series z-scoring with statistics from ``fit_on`` (default: ``frame``).

    Returns the scaled frame and ``{series_id: (mean, std)}``. Population std;
    a std below 1e-12 is replaced by 1 so constant series map to zeros.
    """
    source = fit_on if fit_on is not None else frame
    sc = _Scaler(pooled=pooled).fit({s.id: s.target for s in source})
    out = [Series(s.id, s.timestamps, sc.forward(s.id, s.target), s.exog) for s in frame]
    params = {sid: p for sid, p in sc.params.items() if sid is not None}
    return frame.with_series(out), params


def standard_unscale(frame: LongFrame, params: Mapping[str, tuple[float, float]]) -> LongFrame:
    out = []
    for s in frame:
        if s.id not in params:
            raise UnknownSeries(f"no scaler parameters for series {s.id!r}")
        mean, std = params[s.id]
        out.append(Series(s.id, s.timestamps, s.target * std + mean, s.exog))
    return frame.with_series(out)


def difference_normalize(frame: LongFrame, mode: str = "delta"):
    """Consecutive differences (``delta``) or ratios (``ratio``) per series.

    The first point of each series is dropped; its value is returned as the
    anchor needed by :func:`difference_denormalize`.
    """
    dn = _Differencer(mode)
    out, anchors = [], {}
    for s in frame:
        if len(s) < 2:
            raise SeriesTooShort(f"series {s.id!r} needs at least 2 points to difference", series_id=s.id)
        y = dn.forward(s.id, s.target, s.timestamps, frame.frequency.format)
        out.append(Series(s.id, s.timestamps[1:], y[1:], {k: v[1:] for k, v in s.exog.items()}))
        anchors[s.id] = float(s.target[0])
    return frame.with_series(out), anchors


def difference_denormalize(frame: LongFrame, anchors: Mapping[str, float], mode: str = "delta") -> LongFrame:
    dn = _Differencer(mode)
    step = frame.frequency.step
    out = []
    for s in frame:
        if s.id not in anchors:
            raise MissingAnchor(f"no anchor for series {s.id!r}")
        a = anchors[s.id]
        x = np.concatenate([[a], dn.inverse(s.id, s.target, a)])
        ts = np.concatenate([[s.timestamps[0] - step], s.timestamps])
        ex = {k: np.concatenate([[np.nan], v]) for k, v in s.exog.items()}
        out.append(Series(s.id, ts, x, ex))
    return frame.with_series(out)


# -- Series-to-Features: calendar and id columns --------------------------------


def calendar_parts(ordinals: np.ndarray, frequency: Frequency, parts: Sequence[str]) -> np.ndarray:
    """Calendar features for ordinal timestamps, shape ``(n, len(parts))``.

    ``weekday`` uses Monday=0; ``week`` is the ISO-8601 week number.
    """
    if not frequency.is_calendar:
        if parts:
            raise OrdinalTimestamps(f"calendar parts {list(parts)} requested on integer-ordinal timestamps")
        return np.zeros((len(ordinals), 0))
    days = frequency.to_datetime64(ordinals).astype("datetime64[D]")
    d = days.astype(np.int64)  # days since 1970-01-01 (a Thursday)
    weekday = (d + 3) % 7
    cols = []
    for p in parts:
        if p == "year":
            cols.append(days.astype("datetime64[Y]").astype(np.int64) + 1970)
        elif p == "month":
            cols.append(days.astype("datetime64[M]").astype(np.int64) % 12 + 1)
        elif p == "day":
            cols.append((days - days.astype("datetime64[M]")).astype(np.int64) + 1)
        elif p == "weekday":
            cols.append(weekday)
        elif p == "week":
            thursday = d - weekday + 3
            iso_year = thursday.astype("datetime64[D]").astype("datetime64[Y]")
            jan1 = iso_year.astype("datetime64[D]").astype(np.int64)
            cols.append((thursday - jan1) // 7 + 1)
        else:
            raise ConfigError(f"unknown datetime part {p!r}")
    if not cols:
        return np.zeros((len(d), 0))
    return np.stack(cols, axis=1).astype(float)


def make_datetime_features(frame: LongFrame, parts: Sequence[str]) -> dict[str, np.ndarray]:
    """Per series, a ``(T, len(parts))`` array of calendar features."""
    return {s.id: calendar_parts(s.timestamps, frame.frequency, parts) for s in frame}


def id_columns(encoding: str, vocab: Sequence[str]) -> list[str]:
    return ["id"] if encoding == "label" else [f"id={v}" for v in vocab]


def encode_id(series_id: str, encoding: str, vocab: Sequence[str]) -> np.ndarray:
    if series_id not in vocab:
        raise UnknownSeries(f"series {series_id!r} is not in the id vocabulary {list(vocab)}")
    i = list(vocab).index(series_id)
    if encoding == "label":
        return np.array([float(i)])
    out = np.zeros(len(vocab))
    out[i] = 1.0
    return out


def make_id_features(frame: LongFrame, encoding: str = "label",
                     vocab: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Per series, a ``(T, C)`` array encoding the series id against a sorted vocabulary."""
    vocab = tuple(sorted(frame.ids)) if vocab is None else tuple(vocab)
    return {s.id: np.tile(encode_id(s.id, encoding, vocab), (len(s), 1)) for s in frame}


# -- wide matrix ------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureColumn:
    """One wide column. ``lag=k`` means the value at ``t - k`` steps."""

    name: str
    role: str  # lag | exog | datetime | id | horizon
    source: str
    lag: int | None = None
    series: str | None = None


@dataclass(frozen=True)
class TargetColumn:
    """Target at ``t + offset``; ``offset=None`` means it comes from the horizon feature."""

    offset: int | None
    series_index: int = 0


@dataclass(frozen=True, eq=False)
class RowAnchors:
    """Per-row context for inversion.

    Arrays are indexed ``[row, s]`` where ``s`` runs over the series that a
    row covers (one in global mode, all of them in multivariate mode).
    ``levels[row, s, i]`` is the input to the i-th target-side series
    transform at the anchor time.
    """

    series: np.ndarray
    timestamp: np.ndarray
    last_known: np.ndarray
    last_known_feature: np.ndarray
    levels: np.ndarray

    def take(self, idx) -> "RowAnchors":
        return RowAnchors(self.series[idx], self.timestamp[idx], self.last_known[idx],
                          self.last_known_feature[idx], self.levels[idx])

    @staticmethod
    def concat(parts: Sequence["RowAnchors"]) -> "RowAnchors":
        return RowAnchors(*(np.concatenate([getattr(p, f) for p in parts])
                            for f in ("series", "timestamp", "last_known", "last_known_feature", "levels")))


@dataclass(frozen=True, eq=False)
class LKNState:
    mode: str
    groups: tuple[tuple[int, ...], ...]  # feature column indices sharing one anchor
    anchors: np.ndarray  # (N, len(groups))
    targets: bool


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    X: np.ndarray
    Y: np.ndarray
    columns: tuple[FeatureColumn, ...]
    targets: tuple[TargetColumn, ...]
    anchors: RowAnchors
    series_ids: tuple[str, ...] = ()  # series the S axis of anchors refers to (multivariate)
    step: int = 1
    lkn: LKNState | None = None

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def take(self, idx) -> "FeatureMatrix":
        lkn = self.lkn
        if lkn is not None:
            lkn = replace(lkn, anchors=lkn.anchors[idx])
        return replace(self, X=self.X[idx], Y=self.Y[idx], anchors=self.anchors.take(idx), lkn=lkn)

    def column_index(self, role: str, source: str | None = None, lag: int | None = None,
                     series: str | None = None) -> int:
        for i, c in enumerate(self.columns):
            if c.role == role and (source is None or c.source == source) and (lag is None or c.lag == lag) \
                    and (series is None or c.series == series):
                return i
        raise KeyError((role, source, lag, series))


def _lag_block(values: np.ndarray, idx: np.ndarray, history: int) -> np.ndarray:
    """Rows ``values[i-history+1 .. i]`` for each anchor ``i`` (oldest first)."""
    if len(idx) == 0:
        return np.zeros((0, history))
    win = sliding_window_view(values, history)
    return win[idx - history + 1]


@dataclass(frozen=True, eq=False)
class SeriesState:
    """A series pushed through the fitted Series-to-Series chains."""

    id: str
    timestamps: np.ndarray
    stages: tuple[np.ndarray, ...]  # target chain: raw input, then each output
    features: np.ndarray  # feature-side copy of the target
    exog: Mapping[str, np.ndarray]
    start: int  # first index valid on every side (differencing drops points)


class PipelineState:
    """An ordered transform chain, fitted once on a training frame.

    Use :meth:`fit`. After fitting the state is read-only: building matrices
    and inverting predictions never mutates it.
    """

    def __init__(self, specs: Sequence[TransformSpec]):
        specs = tuple(s if isinstance(s, TransformSpec) else TransformSpec.from_dict(s) for s in specs)
        check_order(specs)
        self.specs = specs
        self.history: int = next(s for s in specs if s.kind == "lag").params["history"]
        self.series_specs = tuple(s for s in specs if s.kind in SERIES_KINDS)
        dt = next((s for s in specs if s.kind == "datetime_features"), None)
        self.datetime_parts: tuple[str, ...] = tuple(dt.params["parts"]) if dt else ()
        self.datetime_lags: int = dt.params["lags"] if dt else 0
        idf = next((s for s in specs if s.kind == "id_features"), None)
        self.id_encoding: str | None = idf.params["encoding"] if idf else None
        self.lkn: TransformSpec | None = next((s for s in specs if s.kind == "last_known_normalizer"), None)
        self.feature_chain: list = []
        self.target_chain: list = []
        self.id_vocab: tuple[str, ...] = ()
        self.exog_names: tuple[str, ...] = ()
        self.categorical: frozenset[str] = frozenset()
        self.frequency: Frequency | None = None
        self.fitted = False

    @classmethod
    def fit(cls, specs: Sequence[TransformSpec], frame: LongFrame) -> "PipelineState":
        state = cls(specs)
        state._fit(frame)
        return state

    def _fit(self, frame: LongFrame) -> None:
        if self.fitted:
            raise RuntimeError("pipeline state is already fitted")
        self.frequency = frame.frequency
        self.exog_names = frame.exog_names
        self.categorical = frozenset(frame.vocab)
        self.id_vocab = tuple(sorted(frame.ids))
        if self.datetime_parts and not frame.frequency.is_calendar:
            raise OrdinalTimestamps(f"datetime parts {list(self.datetime_parts)} need calendar timestamps")
        for side in ("features", "target"):
            chain = []
            cur = {s.id: np.asarray(s.target, dtype=float) for s in frame}
            exog = {s.id: {k: v for k, v in s.exog.items() if k not in self.categorical} for s in frame}
            dropped = 0
            for spec in self.series_specs:
                if spec.apply_to not in (side, "both"):
                    continue
                tr = _make_series_transform(spec)
                tr.fit({k: v[dropped:] for k, v in cur.items()}, exog if side == "features" else None)
                cur = {s.id: _forward(tr, s.id, cur[s.id], s.timestamps, frame.frequency.format) for s in frame}
                dropped += getattr(tr, "drops", 0)
                chain.append(tr)
            if side == "features":
                self.feature_chain = chain
            else:
                self.target_chain = chain
        self.fitted = True

    # -- derived layout ---------------------------------------------------------

    @property
    def n_dropped(self) -> int:
        # each difference normalizer loses the first point on the side it applies to
        return max(sum(s.kind == "difference_normalizer" and s.apply_to in (side, "both")
                       for s in self.series_specs) for side in ("features", "target"))

    @property
    def min_history(self) -> int:
        """Raw points needed to build one feature row."""
        return self.history + self.n_dropped

    @property
    def lkn_on_targets(self) -> bool:
        return self.lkn is not None and self.lkn.apply_to in ("target", "both")

    def _require_fitted(self):
        if not self.fitted:
            raise RuntimeError("pipeline state is not fitted")

    def series_state(self, s: Series) -> SeriesState:
        self._require_fitted()
        x = np.asarray(s.target, dtype=float)
        stages = [x]
        for tr in self.target_chain:
            stages.append(_forward(tr, s.id, stages[-1], s.timestamps, self.frequency.format))
        f = x
        for tr in self.feature_chain:
            f = _forward(tr, s.id, f, s.timestamps, self.frequency.format)
        exog = {}
        for name in self.exog_names:
            v = s.exog.get(name)
            if v is None:
                v = np.full(len(s), np.nan)
            if name not in self.categorical:
                for tr in self.feature_chain:
                    v = tr.forward_exog(s.id, name, v)
            exog[name] = v
        return SeriesState(s.id, s.timestamps, tuple(stages), f, exog, self.n_dropped)

    def columns(self, series_ids: Sequence[str] | None = None) -> tuple[FeatureColumn, ...]:
        """Column layout. ``series_ids`` given means a multivariate row."""
        h = self.history
        cols: list[FeatureColumn] = []
        owners = list(series_ids) if series_ids is not None else [None]
        for sid in owners:
            pre = f"{sid}:" if sid is not None else ""
            cols += [FeatureColumn(f"{pre}lag{h - 1 - i}", "lag", "target", h - 1 - i, sid) for i in range(h)]
            for name in self.exog_names:
                cols += [FeatureColumn(f"{pre}{name}_lag{h - 1 - i}", "exog", name, h - 1 - i, sid)
                         for i in range(h)]
        for k in range(self.datetime_lags):
            cols += [FeatureColumn(f"{p}_lag{k}", "datetime", p, k) for p in self.datetime_parts]
        if self.id_encoding is not None and series_ids is None:
            cols += [FeatureColumn(n, "id", "id") for n in id_columns(self.id_encoding, self.id_vocab)]
        return tuple(cols)

    # -- matrix building ------------------------------------------------------------

    def _series_part(self, st: SeriesState, idx: np.ndarray) -> np.ndarray:
        blocks = [_lag_block(st.features, idx, self.history)]
        blocks += [_lag_block(st.exog[name], idx, self.history) for name in self.exog_names]
        return np.hstack(blocks)

    def _shared_part(self, st: SeriesState, idx: np.ndarray, with_id: bool) -> np.ndarray:
        blocks = []
        if self.datetime_lags:
            t = st.timestamps[idx]
            for k in range(self.datetime_lags):
                blocks.append(calendar_parts(t - k * self.frequency.step, self.frequency, self.datetime_parts))
        if with_id and self.id_encoding is not None:
            blocks.append(np.tile(encode_id(st.id, self.id_encoding, self.id_vocab), (len(idx), 1)))
        return np.hstack(blocks) if blocks else np.zeros((len(idx), 0))

    def _anchor_arrays(self, st: SeriesState, idx: np.ndarray):
        tgt = st.stages[-1]
        levels = np.stack([st.stages[i][idx] for i in range(len(self.target_chain))], axis=-1) \
            if self.target_chain else np.zeros((len(idx), 0))
        return tgt[idx], st.features[idx], levels

    def anchor_range(self, st: SeriesState, max_offset: int) -> np.ndarray:
        lo = st.start + self.history - 1
        hi = len(st.timestamps) - 1 - max_offset
        return np.arange(lo, hi + 1) if hi >= lo else np.zeros(0, dtype=np.int64)

    def build(
        self,
        states: Sequence[SeriesState],
        offsets: Sequence[int],
        multivariate: bool = False,
        anchor_index: Sequence[np.ndarray] | None = None,
        strict: bool = False,
        normalize: bool = True,
    ) -> FeatureMatrix:
        """Wide matrix with targets at ``t + o`` for each ``o`` in ``offsets``.

        Global mode stacks rows of every series; multivariate mode makes one
        row per (aligned) window holding every series. ``anchor_index``
        overrides the default of "every anchor with complete targets".
        """
        self._require_fitted()
        offsets = list(offsets)
        max_off = max(offsets) if offsets else 0
        if anchor_index is None:
            anchor_index = []
            for st in states:
                idx = self.anchor_range(st, max_off)
                if len(idx) == 0:
                    need = self.history + max_off + st.start
                    msg = f"series {st.id!r} has {len(st.timestamps)} points, needs at least {need}"
                    if strict or multivariate:
                        raise SeriesTooShort(msg, series_id=st.id)
                    log.warning("skipping %s", msg)
                anchor_index.append(idx)
        anchor_index = [np.asarray(i, dtype=np.int64) for i in anchor_index]

        if multivariate:
            ids = tuple(st.id for st in states)
            idx = anchor_index[0]
            X = np.hstack([self._series_part(st, idx) for st in states] +
                          [self._shared_part(states[0], idx, with_id=False)])
            Y = np.hstack([st.stages[-1][idx[:, None] + np.asarray(offsets, dtype=np.int64)[None, :]]
                           for st in states]) if offsets else np.zeros((len(idx), 0))
            parts = [self._anchor_arrays(st, idx) for st in states]
            anchors = RowAnchors(
                np.tile(np.array(ids, dtype=object), (len(idx), 1)),
                states[0].timestamps[idx].astype(np.int64),
                np.stack([p[0] for p in parts], axis=1),
                np.stack([p[1] for p in parts], axis=1),
                np.stack([p[2] for p in parts], axis=1),
            )
            targets = tuple(TargetColumn(o, si) for si in range(len(states)) for o in offsets)
            fm = FeatureMatrix(X, Y, self.columns(ids), targets, anchors, ids, self.frequency.step)
        else:
            Xs, Ys, anchor_parts = [], [], []
            for st, idx in zip(states, anchor_index):
                Xs.append(np.hstack([self._series_part(st, idx), self._shared_part(st, idx, with_id=True)]))
                if offsets:
                    Ys.append(st.stages[-1][idx[:, None] + np.asarray(offsets, dtype=np.int64)[None, :]])
                else:
                    Ys.append(np.zeros((len(idx), 0)))
                lk, lkf, lev = self._anchor_arrays(st, idx)
                anchor_parts.append(RowAnchors(
                    np.full((len(idx), 1), st.id, dtype=object),
                    st.timestamps[idx].astype(np.int64),
                    lk[:, None], lkf[:, None], lev[:, None, :],
                ))
            cols = self.columns()
            if not Xs:
                raise SeriesTooShort("no series to build rows from")
            X = np.vstack(Xs) if Xs else np.zeros((0, len(cols)))
            Y = np.vstack(Ys)
            anchors = RowAnchors.concat(anchor_parts)
            targets = tuple(TargetColumn(o, 0) for o in offsets)
            fm = FeatureMatrix(X, Y, cols, targets, anchors, (), self.frequency.step)
        if normalize and self.lkn is not None:
            fm = last_known_normalize(fm, self.lkn.mode, self.lkn.apply_to, bool(self.lkn.params["exog"]),
                                      categorical=self.categorical)
        return fm

    def matrix(self, frame: LongFrame, offsets: Sequence[int], multivariate: bool = False,
               strict: bool = False) -> FeatureMatrix:
        return self.build([self.series_state(s) for s in frame], offsets, multivariate, strict=strict)

    def to_dict(self) -> dict:
        return {"specs": [s.to_dict() for s in self.specs],
                "feature_chain": [t.to_dict() if hasattr(t, "to_dict") else {"kind": t.kind, "mode": t.mode}
                                  for t in self.feature_chain],
                "target_chain": [t.to_dict() if hasattr(t, "to_dict") else {"kind": t.kind, "mode": t.mode}
                                 for t in self.target_chain],
                "id_vocab": list(self.id_vocab)}


def lag_spec(history: int) -> TransformSpec:
    return TransformSpec("lag", params={"history": history})


def make_lag_matrix(frame: LongFrame, history: int, mh: int, strict: bool = False) -> FeatureMatrix:
    """Long-to-wide with no preprocessing: features ``x[t-history+1..t]``, targets ``x[t+1..t+mh]``.

    Series too short for a single row are skipped with a warning unless
    ``strict``.
    """
    state = PipelineState.fit([lag_spec(history)], frame)
    return state.matrix(frame, range(1, mh + 1), strict=strict)


# -- Features-to-Features ---------------------------------------------------------------


def _apply_lkn(values: np.ndarray, anchor: np.ndarray, mode: str, inverse: bool = False) -> np.ndarray:
    if mode == "delta":
        return values + anchor if inverse else values - anchor
    return values * anchor if inverse else values / anchor


def last_known_normalize(
    matrix: FeatureMatrix,
    mode: str = "delta",
    apply_to: str = "both",
    exog: bool = False,
    categorical: frozenset[str] | set[str] = frozenset(),
) -> FeatureMatrix:
    """Rescale each row by its most recent known value.

    Target-lag features use their own lag-0 column as anchor; targets use the
    row's stored last known target-side value. With ``exog`` real exogenous
    lag blocks are also normalized by their own lag-0 value. Datetime, id and
    horizon columns are never touched.
    """
    if matrix.lkn is not None:
        raise ConfigError("matrix is already last-known normalized")
    X = matrix.X.copy()
    Y = matrix.Y.copy()
    groups, anchors = [], []
    if apply_to in ("features", "both"):
        keys = []
        for c in matrix.columns:
            if c.role == "lag" or (exog and c.role == "exog" and c.source not in categorical):
                key = (c.role, c.source, c.series)
                if key not in keys:
                    keys.append(key)
        for role, source, series in keys:
            idx = tuple(i for i, c in enumerate(matrix.columns)
                        if c.role == role and c.source == source and c.series == series)
            lag0 = next(i for i in idx if matrix.columns[i].lag == 0)
            L = matrix.X[:, lag0].copy()
            if mode == "ratio" and np.any(L == 0):
                raise ZeroAnchor(f"ratio last-known normalization: zero anchor in column {matrix.columns[lag0].name!r}")
            X[:, list(idx)] = _apply_lkn(matrix.X[:, list(idx)], L[:, None], mode)
            groups.append(idx)
            anchors.append(L)
    on_targets = apply_to in ("target", "both")
    if on_targets and Y.shape[1]:
        si = np.array([t.series_index for t in matrix.targets])
        L = matrix.anchors.last_known[:, si]
        if mode == "ratio" and np.any(L == 0):
            raise ZeroAnchor("ratio last-known normalization: zero last known target value")
        Y = _apply_lkn(Y, L, mode)
    state = LKNState(mode, tuple(groups),
                     np.stack(anchors, axis=1) if anchors else np.zeros((X.shape[0], 0)), on_targets)
    return replace(matrix, X=X, Y=Y, lkn=state)


def last_known_denormalize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Undo :func:`last_known_normalize` on both features and targets."""
    if matrix.lkn is None:
        return matrix
    st = matrix.lkn
    X = matrix.X.copy()
    for g, idx in enumerate(st.groups):
        X[:, list(idx)] = _apply_lkn(matrix.X[:, list(idx)], st.anchors[:, g][:, None], st.mode, inverse=True)
    Y = matrix.Y
    if st.targets and Y.shape[1]:
        si = np.array([t.series_index for t in matrix.targets])
        Y = _apply_lkn(Y, matrix.anchors.last_known[:, si], st.mode, inverse=True)
    return replace(matrix, X=X, Y=Y, lkn=None)


def inverse_pipeline(state: PipelineState, predictions: np.ndarray, anchors: RowAnchors) -> np.ndarray:
    """Map predictions for offsets ``1..m`` back to original units.

    ``predictions`` has shape ``(N, S, m)`` (or ``(N, m)`` for one series per
    row). Inverses run in reverse order: LKN, then the target-side
    Series-to-Series chain from last to first.
    """
    pred = np.asarray(predictions, dtype=float)
    squeeze = pred.ndim == 2
    if squeeze:
        pred = pred[:, None, :]
    n, s_count, _ = pred.shape
    if anchors.last_known.shape != (n, s_count):
        raise MissingAnchor(f"anchors cover shape {anchors.last_known.shape}, predictions need {(n, s_count)}")
    if state.lkn_on_targets:
        lk = anchors.last_known
        if np.any(~np.isfinite(lk)):
            raise MissingAnchor("last known value missing for LKN inverse")
        pred = _apply_lkn(pred, lk[:, :, None], state.lkn.mode, inverse=True)
    chain = state.target_chain
    if anchors.levels.shape[-1] != len(chain):
        raise MissingAnchor(f"anchors hold {anchors.levels.shape[-1]} levels, pipeline has {len(chain)} target transforms")
    out = pred
    for i in range(len(chain) - 1, -1, -1):
        tr = chain[i]
        step = np.empty_like(out)
        for r in range(n):
            for s in range(s_count):
                step[r, s] = tr.inverse(anchors.series[r, s], out[r, s], anchors.levels[r, s, i])
        out = step
    return out[:, 0, :] if squeeze else out
