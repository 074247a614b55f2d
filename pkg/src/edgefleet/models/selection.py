"""Best-of-four model selection and artifact assembly."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import InsufficientData
from .artifact import ModelArtifact
from .metrics import rmse
from .scaler import fit_scaler
from .training import Algorithm, TrainingConfig, train
from .validation import CVResult, cross_validate

TIE_BREAK_ORDER = tuple(Algorithm)


def evaluate_algorithms(
    X: np.ndarray,
    y: np.ndarray,
    k: int = 10,
    seed: int = 0,
    config: TrainingConfig | None = None,
    algorithms: Iterable[Algorithm] = TIE_BREAK_ORDER,
) -> dict[Algorithm, CVResult]:
    return {algo: cross_validate(algo, X, y, k, seed, config) for algo in algorithms}


def select_best(results: dict[Algorithm, CVResult]) -> Algorithm:
    """Lowest cv_rmse; exact ties go to the earlier algorithm in MLR, SVR, ELM, RFR order."""
    if not results:
        raise ValueError("no candidate algorithms to choose from")
    return min(results, key=lambda a: (results[a].cv_rmse, TIE_BREAK_ORDER.index(a)))


def chronological_test_rmse(
    algorithm: Algorithm,
    X: np.ndarray,
    y: np.ndarray,
    seed: int = 0,
    config: TrainingConfig | None = None,
    train_fraction: float = 0.8,
) -> float:
    """Fit on the earliest ``train_fraction`` of rows and score on the remainder."""
    cut = int(round(len(y) * train_fraction))
    if cut < 1 or cut >= len(y):
        raise InsufficientData(f"cannot split {len(y)} samples {train_fraction:.0%}/rest")
    scaler = fit_scaler(X[:cut])
    params = train(algorithm, scaler.transform(X[:cut]), y[:cut], config, seed)
    return rmse(params.predict(scaler.transform(X[cut:])), y[cut:])


def fit_artifact(
    algorithm: Algorithm,
    X: np.ndarray,
    y: np.ndarray,
    *,
    room: str,
    trained_at: int,
    training_window: tuple[int, int],
    cv_rmse: float,
    test_rmse: float,
    seed: int = 0,
    config: TrainingConfig | None = None,
) -> ModelArtifact:
    scaler = fit_scaler(X)
    params = train(algorithm, scaler.transform(X), y, config, seed)
    return ModelArtifact(
        version=0,
        algorithm=algorithm,
        scaler=scaler,
        params=params,
        trained_at=trained_at,
        training_window=training_window,
        cv_rmse=cv_rmse,
        test_rmse=test_rmse,
        room=room,
    )
