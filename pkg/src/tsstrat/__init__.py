"""Multi-step-ahead forecasting strategies over pluggable regressors.

Typical use::

    from tsstrat import (LongFrame, TransformSpec, StrategySpec, ModeSpec, ModelSpec,
                         fit_forecaster)

    pipeline = [TransformSpec("standard_scaler"),
                TransformSpec("lag", params={"history": 96}),
                TransformSpec("last_known_normalizer", mode="delta")]
    fc = fit_forecaster(frame, pipeline, StrategySpec("mimo", 24), ModeSpec("global"),
                        ModelSpec("ridge"))
    forecasts = fc.forecast(frame)   # {series_id: array of 24 values}
"""

from .data import (
    Frequency,
    LongFrame,
    RoleMap,
    Series,
    check_alignment,
    load_long_csv,
    load_wide_csv,
    temporal_split,
    validate_frame,
)
from .errors import TsstratError
from .models import ModelSpec, fit_model, load_model, register_model, save_model
from .strategies import (
    Forecaster,
    ModeSpec,
    StrategySpec,
    build_strategy_dataset,
    fit_forecaster,
    forecast,
)
from .transforms import PipelineState, TransformSpec, inverse_pipeline, make_lag_matrix
from .validation import (
    CVSpec,
    ExperimentConfig,
    backtest,
    compute_metrics,
    cv_fit_ensemble,
    evaluate,
    make_cv_splits,
    rank_table,
)

__version__ = "0.1.0"

__all__ = [
    "CVSpec",
    "ExperimentConfig",
    "Forecaster",
    "Frequency",
    "LongFrame",
    "ModeSpec",
    "ModelSpec",
    "PipelineState",
    "RoleMap",
    "Series",
    "StrategySpec",
    "TransformSpec",
    "TsstratError",
    "backtest",
    "build_strategy_dataset",
    "check_alignment",
    "compute_metrics",
    "cv_fit_ensemble",
    "evaluate",
    "fit_forecaster",
    "fit_model",
    "forecast",
    "inverse_pipeline",
    "load_long_csv",
    "load_model",
    "load_wide_csv",
    "make_cv_splits",
    "make_lag_matrix",
    "rank_table",
    "register_model",
    "save_model",
    "temporal_split",
    "validate_frame",
]
