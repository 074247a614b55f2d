from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientData
from .metrics import rmse
from .scaler import fit_scaler
from .training import Algorithm, TrainingConfig, train


@dataclass(frozen=True)
class CVResult:
    cv_rmse: float
    fold_rmses: tuple[float, ...]


def contiguous_folds(n: int, k: int) -> list[np.ndarray]:
    """k contiguous index blocks covering 0..n-1; the first n % k blocks get one extra index."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < k:
        raise InsufficientData(f"{n} samples cannot fill {k} folds")
    return [np.asarray(block) for block in np.array_split(np.arange(n), k)]


def cross_validate(
    algorithm: Algorithm | str,
    X: np.ndarray,
    y: np.ndarray,
    k: int = 10,
    seed: int = 0,
    config: TrainingConfig | None = None,
) -> CVResult:
    """Unshuffled k-fold CV on raw features; each fold refits its own scaler."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    folds = contiguous_folds(len(y), k)
    scores = []
    for held_out in folds:
        mask = np.ones(len(y), dtype=bool)
        mask[held_out] = False
        scaler = fit_scaler(X[mask])
        params = train(algorithm, scaler.transform(X[mask]), y[mask], config, seed)
        scores.append(rmse(params.predict(scaler.transform(X[held_out])), y[held_out]))
    return CVResult(float(np.mean(scores)), tuple(float(s) for s in scores))
