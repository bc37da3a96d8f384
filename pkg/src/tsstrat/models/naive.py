"""Persistence and seasonal-naive baselines.

Both read lag columns straight out of the feature row, so they work with any
strategy: output ``j`` (predicting ``t + j + 1``) copies the value
``(period - 1 - j) mod period`` steps back. Persistence is ``period = 1``.
"""

from __future__ import annotations

import numpy as np

from ..errors import InsufficientLags
from .base import FitContext, ModelSpec, TrainedModel, TrainingReport, lag_lookup, register_model


class NaiveModel(TrainedModel):
    def __init__(self, spec, n_features, n_outputs, period: int, lag_table: np.ndarray,
                 offsets: np.ndarray, series_index: np.ndarray, horizon: tuple[str, list[int]] | None,
                 report=None):
        super().__init__(spec, n_features, n_outputs, report)
        self.period = period
        self.lag_table = lag_table
        self.offsets = offsets  # 1-based step ahead per output, 0 = read from horizon feature
        self.series_index = series_index
        self.horizon = horizon  # (encoding, column indices) for flattened horizons

    def _horizon(self, X):
        encoding, cols = self.horizon
        if encoding == "raw":
            return X[:, cols[0]].astype(np.int64)
        return np.argmax(X[:, cols], axis=1) + 1

    def _predict(self, X):
        n = X.shape[0]
        out = np.empty((n, self.n_outputs))
        rows = np.arange(n)
        for j in range(self.n_outputs):
            off = self.offsets[j]
            off = np.full(n, off) if off > 0 else self._horizon(X)
            lag = (self.period - off) % self.period
            col = self.lag_table[self.series_index[j], lag]
            out[:, j] = X[rows, col]
        return out

    def _state(self):
        return {"period": self.period, "lag_table": self.lag_table.tolist(), "offsets": self.offsets.tolist(),
                "series_index": self.series_index.tolist(),
                "horizon": [self.horizon[0], self.horizon[1]] if self.horizon else None}

    @classmethod
    def _from_state(cls, spec, n_features, n_outputs, report, state):
        h = state["horizon"]
        return cls(spec, n_features, n_outputs, state["period"], np.asarray(state["lag_table"], dtype=np.int64),
                   np.asarray(state["offsets"], dtype=np.int64), np.asarray(state["series_index"], dtype=np.int64),
                   (h[0], list(h[1])) if h else None, report)


def fit_naive(spec: ModelSpec, context: FitContext, n_features: int | None = None) -> NaiveModel:
    """Bind a naive baseline to a feature layout; there is nothing to learn."""
    period = 1 if spec.kind == "persistence" else spec.params["period"]
    columns = context.columns
    table = lag_lookup(columns, context.series_ids)
    if table.shape[1] < period or np.any(table[:, :period] < 0):
        raise InsufficientLags(
            f"{spec.label} needs target lags 0..{period - 1}, feature row has {table.shape[1]}"
        )
    offsets = np.array([t.offset if t.offset is not None else 0 for t in context.targets], dtype=np.int64)
    series_index = np.array([t.series_index for t in context.targets], dtype=np.int64)
    horizon = None
    hcols = [i for i, c in enumerate(columns) if c.role == "horizon"]
    if hcols:
        horizon = ("raw" if columns[hcols[0]].source == "index" else "onehot", hcols)
    elif np.any(offsets == 0):
        raise InsufficientLags("targets without a fixed offset need a horizon-index feature")
    n_features = len(columns) if n_features is None else n_features
    return NaiveModel(spec, n_features, len(context.targets), period, table, offsets, series_index, horizon,
                      TrainingReport())


@register_model("persistence", NaiveModel)
def _fit_persistence(spec, X, Y, context: FitContext, validation=None):
    return fit_naive(spec, context, X.shape[1])


@register_model("seasonal_naive", NaiveModel)
def _fit_seasonal(spec, X, Y, context: FitContext, validation=None):
    return fit_naive(spec, context, X.shape[1])
