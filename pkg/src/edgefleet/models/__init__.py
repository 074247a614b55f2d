"""Scaler, the four regressors, RMSE/CV evaluation and portable model artifacts."""

from .artifact import (
    ARTIFACT_SUFFIX,
    FORMAT_VERSION,
    ModelArtifact,
    deserialize,
    predict,
    serialize,
    verify,
)
from .elm import ELMConfig, ELMParams
from .forest import RFRConfig, RFRParams, Tree
from .linear import MLRParams, SVRConfig, SVRParams, fit_svr
from .metrics import rmse
from .scaler import ScalerParams, apply_scaler, fit_scaler
from .selection import (
    TIE_BREAK_ORDER,
    chronological_test_rmse,
    evaluate_algorithms,
    fit_artifact,
    select_best,
)
from .training import Algorithm, ModelParams, TrainingConfig, algorithm_of, train
from .validation import CVResult, contiguous_folds, cross_validate

__all__ = [
    "ARTIFACT_SUFFIX",
    "FORMAT_VERSION",
    "Algorithm",
    "CVResult",
    "ELMConfig",
    "ELMParams",
    "MLRParams",
    "ModelArtifact",
    "ModelParams",
    "RFRConfig",
    "RFRParams",
    "SVRConfig",
    "SVRParams",
    "ScalerParams",
    "TIE_BREAK_ORDER",
    "TrainingConfig",
    "Tree",
    "algorithm_of",
    "apply_scaler",
    "chronological_test_rmse",
    "contiguous_folds",
    "cross_validate",
    "deserialize",
    "evaluate_algorithms",
    "fit_artifact",
    "fit_scaler",
    "fit_svr",
    "predict",
    "rmse",
    "select_best",
    "serialize",
    "train",
    "verify",
]
