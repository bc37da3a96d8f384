"""Run configuration: JSON schema, defaults, canonical form and content hash.

A config names one dataset and a grid of settings; every combination of
preprocessing, feature flags, strategy, mode and model is one sweep cell.

    {
      "dataset": {"path": "ili.csv", "format": "wide", "datetime_column": "date",
                  "frequency": "W"},
      "history": 96, "horizon": 24,
      "preprocessings": {"SS": [{"kind": "standard_scaler"}],
                         "SS + LKN": [{"kind": "standard_scaler"},
                                      {"kind": "last_known_normalizer", "mode": "delta"}]},
      "features": {"datetime": [false, true], "id": [false, true]},
      "strategies": [{"kind": "mimo"}, {"kind": "recursive", "model_horizon": 6}],
      "modes": ["global", "multivariate_cm"],
      "models": [{"kind": "ridge"}, {"kind": "gbdt", "params": {"n_trees": 50}}],
      "validation": {"cv": {"scheme": "expanding", "n_folds": 3},
                     "backtest": {"n_windows": 1}},
      "seed": 0, "output_dir": "runs/ili"
    }
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..data import Frequency, LongFrame, RoleMap, load_long_csv, load_wide_csv
from ..errors import ConfigError, ConstraintError, DataError, InvalidStrategySpec, SchemaError
from ..models import ModelSpec
from ..strategies import ModeSpec, StrategySpec
from ..transforms import TransformSpec
from ..validation import CVSpec, ExperimentConfig

DEFAULT_HISTORY = 96
DEFAULT_HORIZON = 24
PREPROCESSING_KINDS = ("standard_scaler", "difference_normalizer", "last_known_normalizer")


def _obj(value: Any, path: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(value, Mapping):
        raise SchemaError("expected an object", path)
    for key in value:
        if key not in allowed:
            raise SchemaError(f"unknown key {key!r}", f"{path}.{key}")
    for key in required:
        if key not in value:
            raise SchemaError("required key missing", f"{path}.{key}")
    return dict(value)


def _keys(value: Any) -> set[str]:
    # free-form mappings: any key is allowed, the value just has to be an object
    return set(value) if isinstance(value, Mapping) else set()


def _typed(value: Any, path: str, types, what: str):
    # bool is an int subclass; reject it where a number is expected
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise SchemaError(f"expected {what}, got {value!r}", path)
    if not isinstance(value, types):
        raise SchemaError(f"expected {what}, got {value!r}", path)
    return value


def _list(value: Any, path: str, nonempty: bool = True) -> list:
    if not isinstance(value, list):
        raise SchemaError("expected a list", path)
    if nonempty and not value:
        raise ConstraintError(f"{path}: grid must not be empty")
    return value


@dataclass(frozen=True)
class DatasetConfig:
    path: str
    format: str = "long"
    frequency: str | int = "D"
    delimiter: str = ","
    role_map: RoleMap | None = None
    datetime_column: str = "date"  # wide format
    channels: tuple[str, ...] | None = None  # wide format

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"path": self.path, "format": self.format,
                             "frequency": self.frequency, "delimiter": self.delimiter}
        if self.format == "long":
            d["role_map"] = self.role_map.to_dict()
        else:
            d["datetime_column"] = self.datetime_column
            d["channels"] = list(self.channels) if self.channels is not None else None
        return d

    def load(self, base_dir: str | Path = ".") -> LongFrame:
        path = Path(self.path)
        if not path.is_absolute():
            path = Path(base_dir) / path
        if not path.is_file():
            raise DataError(f"dataset file {path} not found")
        if self.format == "long":
            return load_long_csv(path, self.role_map, self.frequency, self.delimiter)
        return load_wide_csv(path, self.datetime_column, self.frequency, self.channels, self.delimiter)


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    history: int = DEFAULT_HISTORY
    horizon: int = DEFAULT_HORIZON
    preprocessings: Mapping[str, tuple[TransformSpec, ...]] = field(default_factory=lambda: {"none": ()})
    datetime_features: tuple[bool, ...] = (False,)
    datetime_parts: tuple[str, ...] = ("month", "week")
    id_features: tuple[bool, ...] = (False,)
    id_encoding: str = "label"
    strategies: tuple[StrategySpec, ...] = ()
    modes: tuple[ModeSpec, ...] = (ModeSpec(),)
    models: tuple[ModelSpec, ...] = (ModelSpec("ridge"),)
    cv: CVSpec = CVSpec()
    backtest_windows: int = 1
    backtest_stride: int | None = None
    seed: int = 0
    output_dir: str = "runs"
    save_forecasts: bool = False
    base_dir: str = field(default=".", compare=False)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "history": self.history,
            "horizon": self.horizon,
            "preprocessings": {name: [s.to_dict() for s in specs] for name, specs in self.preprocessings.items()},
            "features": {"datetime": list(self.datetime_features), "datetime_parts": list(self.datetime_parts),
                         "id": list(self.id_features), "id_encoding": self.id_encoding},
            "strategies": [{"kind": s.kind, "model_horizon": s.model_horizon,
                            **({"horizon_encoding": s.horizon_encoding} if s.kind == "flat_wide_mimo" else {})}
                           for s in self.strategies],
            "modes": [m.name for m in self.modes],
            "models": [{"kind": m.kind, "params": dict(m.params)} for m in self.models],
            "validation": {"cv": self.cv.to_dict(),
                           "backtest": {"n_windows": self.backtest_windows, "stride": self.backtest_stride}},
            "seed": self.seed,
            "output_dir": self.output_dir,
            "save_forecasts": self.save_forecasts,
        }

    @property
    def hash(self) -> str:
        return config_hash(self)

    def pipeline(self, preprocessing: str, datetime: bool, ids: bool) -> tuple[TransformSpec, ...]:
        specs = list(self.preprocessings[preprocessing])
        series = [s for s in specs if s.kind != "last_known_normalizer"]
        lkn = [s for s in specs if s.kind == "last_known_normalizer"]
        if datetime:
            series.append(TransformSpec("datetime_features", params={"parts": list(self.datetime_parts)}))
        if ids:
            series.append(TransformSpec("id_features", params={"encoding": self.id_encoding}))
        return tuple(series + [TransformSpec("lag", params={"history": self.history})] + lkn)

    def cells(self) -> list[tuple[str, ExperimentConfig]]:
        """Every grid combination with a stable id, in a fixed order."""
        out = []
        grid = itertools.product(self.models, self.strategies, self.modes, self.preprocessings,
                                 self.datetime_features, self.id_features)
        for i, (model, strategy, mode, prep, dt, ids) in enumerate(grid):
            model = ModelSpec(model.kind, model.params, self.seed)
            cfg = ExperimentConfig(self.pipeline(prep, dt, ids), strategy, mode, model, self.cv, prep)
            out.append((f"c{i:04d}", cfg))
        return out

    def load_dataset(self) -> LongFrame:
        return self.dataset.load(self.base_dir)


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON; ``seed`` and ``output_dir`` are excluded
    since both may be overridden from the command line."""
    d = config.to_dict()
    d.pop("output_dir")
    d.pop("seed")
    text = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# -- parsing -------------------------------------------------------------------


def _dataset(value: Any) -> DatasetConfig:
    d = _obj(value, "dataset", {"path", "format", "frequency", "delimiter", "role_map",
                                "datetime_column", "channels"}, {"path"})
    fmt = d.get("format", "long")
    if fmt not in ("long", "wide"):
        raise SchemaError("expected long or wide", "dataset.format")
    freq = d.get("frequency", "D")
    try:
        Frequency.parse(freq)
    except (ValueError, TypeError) as e:
        raise SchemaError(str(e), "dataset.frequency") from None
    delim = _typed(d.get("delimiter", ","), "dataset.delimiter", str, "a string")
    if len(delim) != 1:
        raise SchemaError("must be a single character", "dataset.delimiter")
    role_map = None
    if fmt == "long":
        if "role_map" not in d:
            raise SchemaError("required for long format", "dataset.role_map")
        rm = _obj(d["role_map"], "dataset.role_map", {"id", "datetime", "target", "exogenous"},
                  {"id", "datetime", "target"})
        ex = _obj(rm.get("exogenous", {}), "dataset.role_map.exogenous", _keys(rm.get("exogenous", {})))
        try:
            role_map = RoleMap(rm["id"], rm["datetime"], rm["target"], ex)
        except ValueError as e:
            raise SchemaError(str(e), "dataset.role_map") from None
    else:
        for key in ("role_map",):
            if key in d:
                raise SchemaError("not used by the wide format", f"dataset.{key}")
    channels = d.get("channels")
    if channels is not None:
        channels = tuple(_typed(c, f"dataset.channels[{i}]", str, "a column name")
                         for i, c in enumerate(_list(channels, "dataset.channels")))
    return DatasetConfig(_typed(d["path"], "dataset.path", str, "a string"), fmt, freq, delim, role_map,
                         _typed(d.get("datetime_column", "date"), "dataset.datetime_column", str, "a string"),
                         channels)


def _transform(value: Any, path: str) -> TransformSpec:
    d = _obj(value, path, {"kind", "mode", "apply_to", "params"}, {"kind"})
    if d["kind"] not in PREPROCESSING_KINDS:
        raise SchemaError(f"expected one of {PREPROCESSING_KINDS}, got {d['kind']!r}", f"{path}.kind")
    try:
        return TransformSpec(d["kind"], d.get("mode"), d.get("apply_to", "both"), d.get("params", {}))
    except ConfigError as e:
        raise SchemaError(str(e), path) from None


def _strategy(value: Any, path: str, horizon: int) -> StrategySpec:
    d = _obj(value, path, {"kind", "model_horizon", "horizon_encoding"}, {"kind"})
    try:
        return StrategySpec(d["kind"], horizon, d.get("model_horizon"), d.get("horizon_encoding", "raw"))
    except InvalidStrategySpec as e:
        raise ConstraintError(f"{path}: {e}") from None


def _model(value: Any, path: str) -> ModelSpec:
    d = _obj(value, path, {"kind", "params"}, {"kind"})
    params = _obj(d.get("params", {}), f"{path}.params", _keys(d.get("params", {})))
    try:
        return ModelSpec(d["kind"], params)
    except ConfigError as e:
        raise ConstraintError(f"{path}: {e}") from None


def parse_config_dict(raw: Any, base_dir: str | Path = ".") -> RunConfig:
    top = _obj(raw, "config", {"dataset", "history", "horizon", "preprocessings", "features", "strategies",
                               "modes", "models", "validation", "seed", "output_dir", "save_forecasts"},
               {"dataset", "strategies"})
    dataset = _dataset(top["dataset"])
    history = _typed(top.get("history", DEFAULT_HISTORY), "history", int, "an integer")
    horizon = _typed(top.get("horizon", DEFAULT_HORIZON), "horizon", int, "an integer")
    if history < 1 or horizon < 1:
        raise ConstraintError("history and horizon must be positive")

    preps_value = top.get("preprocessings", {"none": []})
    preps_raw = _obj(preps_value, "preprocessings", _keys(preps_value))
    if not preps_raw:
        raise ConstraintError("preprocessings: grid must not be empty")
    preps = {}
    for name, specs in preps_raw.items():
        path = f"preprocessings.{name}"
        preps[name] = tuple(_transform(s, f"{path}[{i}]") for i, s in enumerate(_list(specs, path, nonempty=False)))
        if sum(s.kind == "last_known_normalizer" for s in preps[name]) > 1:
            raise ConstraintError(f"{path}: last_known_normalizer may appear at most once")

    feats = _obj(top.get("features", {}), "features", {"datetime", "datetime_parts", "id", "id_encoding"})
    dt = tuple(_typed(v, f"features.datetime[{i}]", bool, "a boolean")
               for i, v in enumerate(_list(feats.get("datetime", [False]), "features.datetime")))
    ids = tuple(_typed(v, f"features.id[{i}]", bool, "a boolean")
                for i, v in enumerate(_list(feats.get("id", [False]), "features.id")))
    parts = tuple(_list(feats.get("datetime_parts", ["month", "week"]), "features.datetime_parts"))
    id_enc = feats.get("id_encoding", "label")
    try:
        TransformSpec("datetime_features", params={"parts": list(parts)})
        TransformSpec("id_features", params={"encoding": id_enc})
    except ConfigError as e:
        raise SchemaError(str(e), "features") from None

    strategies = tuple(_strategy(s, f"strategies[{i}]", horizon)
                       for i, s in enumerate(_list(top["strategies"], "strategies")))
    modes = []
    for i, m in enumerate(_list(top.get("modes", ["global"]), "modes")):
        try:
            modes.append(ModeSpec.parse(_typed(m, f"modes[{i}]", str, "a mode name")))
        except ConfigError as e:
            raise SchemaError(str(e), f"modes[{i}]") from None
    models = tuple(_model(m, f"models[{i}]") for i, m in enumerate(_list(top.get("models", [{"kind": "ridge"}]), "models")))

    val = _obj(top.get("validation", {}), "validation", {"cv", "backtest"})
    cv_raw = _obj(val.get("cv", {}), "validation.cv", {"scheme", "n_folds", "window"})
    try:
        cv = CVSpec(cv_raw.get("scheme", "expanding"), cv_raw.get("n_folds", 3), cv_raw.get("window"))
    except ConfigError as e:
        raise ConstraintError(f"validation.cv: {e}") from None
    bt = _obj(val.get("backtest", {}), "validation.backtest", {"n_windows", "stride"})
    n_windows = _typed(bt.get("n_windows", 1), "validation.backtest.n_windows", int, "an integer")
    stride = bt.get("stride")
    if stride is not None:
        _typed(stride, "validation.backtest.stride", int, "an integer")
    if n_windows < 1 or (stride is not None and stride < 1):
        raise ConstraintError("validation.backtest: n_windows and stride must be positive")

    return RunConfig(
        dataset, history, horizon, preps, dt, parts, ids, id_enc, strategies, tuple(modes), models, cv,
        n_windows, stride,
        _typed(top.get("seed", 0), "seed", int, "an integer"),
        _typed(top.get("output_dir", "runs"), "output_dir", str, "a string"),
        _typed(top.get("save_forecasts", False), "save_forecasts", bool, "a boolean"),
        str(base_dir),
    )


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON ({e})", "") from None
    return parse_config_dict(raw, path.parent)
