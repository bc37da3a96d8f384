from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from ..errors import ConfigError, DimensionMismatch
from ..transforms import FeatureColumn, TargetColumn

SCHEMA_VERSION = 1

_PARAMS: dict[str, dict[str, Any]] = {
    "persistence": {},
    "seasonal_naive": {"period": 1},
    "ridge": {"lambda": 1.0},
    "gbdt": {
        "n_trees": 100,
        "max_depth": 3,
        "learning_rate": 0.1,
        "min_samples_leaf": 5,
        "early_stopping_rounds": 10,
    },
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _PARAMS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {sorted(_PARAMS)}")
        unknown = set(self.params) - set(_PARAMS[self.kind])
        if unknown:
            raise ConfigError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        p = {**_PARAMS[self.kind], **self.params}
        if self.kind == "ridge" and not p["lambda"] >= 0:
            raise ConfigError("ridge: lambda must be >= 0")
        if self.kind == "seasonal_naive" and not (isinstance(p["period"], int) and p["period"] >= 1):
            raise ConfigError("seasonal_naive: period must be an integer >= 1")
        if self.kind == "gbdt":
            if not 0 < p["learning_rate"] <= 1:
                raise ConfigError("gbdt: learning_rate must be in (0, 1]")
            if not (isinstance(p["max_depth"], int) and p["max_depth"] >= 1):
                raise ConfigError("gbdt: max_depth must be an integer >= 1")
            for k in ("n_trees", "min_samples_leaf"):
                if not (isinstance(p[k], int) and p[k] >= 1):
                    raise ConfigError(f"gbdt: {k} must be an integer >= 1")
            if p["early_stopping_rounds"] is not None and not (
                    isinstance(p["early_stopping_rounds"], int) and p["early_stopping_rounds"] >= 1):
                raise ConfigError("gbdt: early_stopping_rounds must be a positive integer or null")
        object.__setattr__(self, "params", p)

    @property
    def label(self) -> str:
        if self.kind == "seasonal_naive":
            return f"seasonal_naive({self.params['period']})"
        return self.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        d = dict(d)
        return cls(d.pop("kind"), d.pop("params", {}), d.pop("seed", 0), **d)


@dataclass(frozen=True)
class FitContext:
    """What the strategy layer knows about the matrix a model is fitted on."""

    columns: tuple[FeatureColumn, ...] = ()
    targets: tuple[TargetColumn, ...] = ()
    series_ids: tuple[str, ...] = ()


@dataclass
class TrainingReport:
    losses: list[list[float]] = field(default_factory=list)  # per output, per round
    stopped_at: list[int] = field(default_factory=list)
    best_round: list[int] = field(default_factory=list)
    val_losses: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"losses": self.losses, "stopped_at": self.stopped_at,
                "best_round": self.best_round, "val_losses": self.val_losses}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingReport":
        return cls(**{k: list(d.get(k, [])) for k in ("losses", "stopped_at", "best_round", "val_losses")})


class TrainedModel:
    """A fitted regressor mapping ``(N, F)`` features to ``(N, M)`` outputs.

    Subclasses implement ``_predict`` and the ``_state``/``_from_state``
    pair used for persistence. Instances are not mutated after fitting.
    """

    def __init__(self, spec: ModelSpec, n_features: int, n_outputs: int, report: TrainingReport | None = None):
        self.spec = spec
        self.n_features = n_features
        self.n_outputs = n_outputs
        self.report = report or TrainingReport()

    @property
    def kind(self) -> str:
        return self.spec.kind

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"{self.kind} model expects {self.n_features} features, got array of shape {X.shape}"
            )
        return self._predict(X)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _state(self) -> dict:
        raise NotImplementedError

    @classmethod
    def _from_state(cls, spec: ModelSpec, n_features: int, n_outputs: int, report: TrainingReport,
                    state: Mapping) -> "TrainedModel":
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "n_features": self.n_features,
            "n_outputs": self.n_outputs,
            "report": self.report.to_dict(),
            "state": self._state(),
        }


# kind -> (fit function, model class)
_REGISTRY: dict[str, tuple[Callable[..., TrainedModel], type[TrainedModel]]] = {}


def register_model(kind: str, model_cls: type[TrainedModel], params: Mapping[str, Any] | None = None):
    """Register a fit function for ``kind``. Used as a decorator.

    The fit function is called as ``fit(spec, X, Y, context=..., validation=...)``.
    """
    if params is not None:
        _PARAMS[kind] = dict(params)

    def deco(fn):
        _REGISTRY[kind] = (fn, model_cls)
        return fn

    return deco


def fit_model(
    spec: ModelSpec,
    X: np.ndarray,
    Y: np.ndarray,
    context: FitContext | None = None,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> TrainedModel:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape}, Y has shape {Y.shape}")
    fn, _ = _REGISTRY[spec.kind]
    return fn(spec, X, Y, context=context or FitContext(), validation=validation)


def predict(model: TrainedModel, X) -> np.ndarray:
    return model.predict(X)


def model_from_dict(d: Mapping) -> TrainedModel:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {d.get('schema_version')!r}")
    _, cls = _REGISTRY[d["kind"]]
    return cls._from_state(ModelSpec.from_dict(d["spec"]), d["n_features"], d["n_outputs"],
                           TrainingReport.from_dict(d["report"]), d["state"])


def save_model(model: TrainedModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path: str | Path) -> TrainedModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def lag_lookup(columns: Sequence[FeatureColumn], series_ids: Sequence[str]) -> np.ndarray:
    """``table[s, k]`` = index of the target lag-``k`` column of series ``s`` (-1 if absent)."""
    owners = list(series_ids) if series_ids else [None]
    max_lag = max((c.lag for c in columns if c.role == "lag"), default=-1)
    table = np.full((len(owners), max_lag + 1), -1, dtype=np.int64)
    for i, c in enumerate(columns):
        if c.role == "lag":
            table[owners.index(c.series), c.lag] = i
    return table
