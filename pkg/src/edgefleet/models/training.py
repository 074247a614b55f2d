"""Algorithm dispatch: one entry point to train any of the four regressors."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import InsufficientData
from .elm import ELMConfig, ELMParams, fit_elm
from .forest import RFRConfig, RFRParams, fit_rfr
from .linear import MLRParams, SVRConfig, SVRParams, fit_mlr, fit_svr

MIN_TRAINING_SAMPLES = 10


class Algorithm(str, enum.Enum):
    # declaration order is the tie-break order when ranking by CV error
    MLR = "MLR"
    SVR = "SVR"
    ELM = "ELM"
    RFR = "RFR"

    @classmethod
    def parse(cls, text: str) -> Algorithm:
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise ValueError(f"unknown algorithm {text!r}; expected one of mlr, svr, elm, rfr") from None


ModelParams = Union[MLRParams, SVRParams, ELMParams, RFRParams]


@dataclass(frozen=True)
class TrainingConfig:
    svr: SVRConfig = SVRConfig()
    elm: ELMConfig = ELMConfig()
    rfr: RFRConfig = RFRConfig()


def algorithm_of(params: ModelParams) -> Algorithm:
    for algo, cls in (
        (Algorithm.MLR, MLRParams),
        (Algorithm.SVR, SVRParams),
        (Algorithm.ELM, ELMParams),
        (Algorithm.RFR, RFRParams),
    ):
        if isinstance(params, cls):
            return algo
    raise TypeError(f"not a model parameter set: {type(params).__name__}")


def train(
    algorithm: Algorithm | str,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainingConfig | None = None,
    seed: int = 0,
) -> ModelParams:
    """Fit one regressor on an already-scaled feature matrix.

    Deterministic in (algorithm, X, y, config, seed).
    """
    algorithm = Algorithm.parse(algorithm) if isinstance(algorithm, str) else algorithm
    config = config or TrainingConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X has shape {X.shape} but y has {y.shape[0]} labels")
    needed = MIN_TRAINING_SAMPLES
    if algorithm is Algorithm.ELM:
        needed = max(needed, config.elm.hidden_size)
    if X.shape[0] < needed:
        raise InsufficientData(f"{algorithm.value} needs at least {needed} samples, got {X.shape[0]}")

    if algorithm is Algorithm.MLR:
        return fit_mlr(X, y)
    if algorithm is Algorithm.SVR:
        return fit_svr(X, y, config.svr, seed)[0]
    if algorithm is Algorithm.ELM:
        return fit_elm(X, y, config.elm, seed)
    return fit_rfr(X, y, config.rfr, seed)
