"""Pluggable regressors: a small registry plus built-in baselines."""

from .base import (
    FitContext,
    ModelSpec,
    TrainedModel,
    TrainingReport,
    fit_model,
    load_model,
    model_from_dict,
    predict,
    register_model,
    save_model,
)
from .gbdt import GBDTModel, fit_gbdt
from .linear import RidgeModel, fit_ridge
from .naive import NaiveModel, fit_naive

__all__ = [
    "FitContext",
    "GBDTModel",
    "ModelSpec",
    "NaiveModel",
    "RidgeModel",
    "TrainedModel",
    "TrainingReport",
    "fit_gbdt",
    "fit_model",
    "fit_naive",
    "fit_ridge",
    "load_model",
    "model_from_dict",
    "predict",
    "register_model",
    "save_model",
]
