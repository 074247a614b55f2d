from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import EmptyInput
from ..pipeline import N_FEATURES, FeatureVector


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature mean and population standard deviation."""

    means: tuple[float, ...]
    std_devs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.means) != N_FEATURES or len(self.std_devs) != N_FEATURES:
            raise ValueError("scaler needs one mean and one std dev per feature")
        if not all(s > 0 for s in self.std_devs):
            raise ValueError("scaler std devs must be strictly positive")

    @classmethod
    def identity(cls) -> ScalerParams:
        return cls((0.0,) * N_FEATURES, (1.0,) * N_FEATURES)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - np.asarray(self.means)) / np.asarray(self.std_devs)


def _as_matrix(X: Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    if isinstance(X, np.ndarray):
        return np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
    return np.array([x.values for x in X], dtype=np.float64).reshape(-1, N_FEATURES)


def fit_scaler(X: Sequence[FeatureVector] | np.ndarray) -> ScalerParams:
    M = _as_matrix(X)
    if M.shape[0] == 0:
        raise EmptyInput("cannot fit a scaler on zero samples")
    means = M.mean(axis=0)
    # second pass recovers the rounding lost by large offsets with a small spread
    means += (M - means).mean(axis=0)
    stds = (M - means).std(axis=0)
    constant = np.ptp(M, axis=0) == 0
    # constant columns: exact mean so the transform is exactly zero, unit scale
    means[constant] = M[0, constant]
    stds[constant] = 1.0
    stds[stds <= 0] = 1.0
    return ScalerParams(tuple(float(v) for v in means), tuple(float(v) for v in stds))


def apply_scaler(params: ScalerParams, x: FeatureVector | Sequence[float]) -> np.ndarray:
    values = x.values if isinstance(x, FeatureVector) else x
    return params.transform(np.asarray(values, dtype=np.float64))
