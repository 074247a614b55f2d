"""Multiple linear regression and linear epsilon-insensitive support vector regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import SingularSystem

GRAM_DAMPING = 1e-8


@dataclass(frozen=True)
class MLRParams:
    weights: tuple[float, ...]
    intercept: float

    def predict(self, Xs: np.ndarray) -> np.ndarray:
        return np.asarray(Xs, dtype=np.float64) @ np.asarray(self.weights) + self.intercept


def fit_mlr(X: np.ndarray, y: np.ndarray) -> MLRParams:
    """Least squares via damped normal equations; the intercept is the last unknown."""
    A = np.hstack([X, np.ones((X.shape[0], 1))])
    gram = A.T @ A + GRAM_DAMPING * np.eye(A.shape[1])
    try:
        beta = np.linalg.solve(gram, A.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"normal equations unsolvable after damping: {exc}") from exc
    if not np.all(np.isfinite(beta)):
        raise SingularSystem("normal equations produced non-finite coefficients")
    return MLRParams(tuple(float(v) for v in beta[:-1]), float(beta[-1]))


@dataclass(frozen=True)
class SVRConfig:
    epsilon: float = 0.1
    C: float = 1.0
    epochs: int = 200
    learning_rate: float = 0.01


@dataclass(frozen=True)
class SVRParams:
    weights: tuple[float, ...]
    intercept: float
    epsilon: float
    C: float
    epochs: int
    learning_rate: float

    def predict(self, Xs: np.ndarray) -> np.ndarray:
        return np.asarray(Xs, dtype=np.float64) @ np.asarray(self.weights) + self.intercept


@njit(cache=True)
def svr_objective(X, y, w, b, epsilon, lam):
    n = X.shape[0]
    total = 0.0
    for i in range(n):
        r = y[i] - b
        for j in range(X.shape[1]):
            r -= X[i, j] * w[j]
        excess = abs(r) - epsilon
        if excess > 0.0:
            total += excess
    return 0.5 * lam * np.dot(w, w) + total / n


@njit(cache=True)
def _svr_sgd(X, y, w, b, epsilon, lam, lr0, epochs, seed):
    np.random.seed(seed)
    n, d = X.shape
    history = np.empty(epochs)
    best_w = w.copy()
    best_b = b
    best = np.inf
    for epoch in range(epochs):
        lr = lr0 / (epoch + 1)
        order = np.random.permutation(n)
        for k in range(n):
            i = order[k]
            r = y[i] - b
            for j in range(d):
                r -= X[i, j] * w[j]
            if r > epsilon:
                g = -1.0
            elif r < -epsilon:
                g = 1.0
            else:
                g = 0.0
            for j in range(d):
                w[j] -= lr * (lam * w[j] + g * X[i, j])
            b -= lr * g
        obj = svr_objective(X, y, w, b, epsilon, lam)
        if obj < best:
            best = obj
            best_w[:] = w
            best_b = b
        history[epoch] = best
    return best_w, best_b, history


def fit_svr(
    X: np.ndarray, y: np.ndarray, config: SVRConfig = SVRConfig(), seed: int = 0
) -> tuple[SVRParams, np.ndarray]:
    """Per-sample subgradient descent on lam/2 |w|^2 + mean eps-insensitive loss.

    lam = 1/(C n) gives the same minimiser as the usual C * sum-of-slacks form.
    The step size decays as lr/epoch and the best epoch iterate is kept, so the
    returned history (objective of the kept iterate) never increases.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = X.shape[0]
    lam = 1.0 / (config.C * n)
    w0 = np.zeros(X.shape[1])
    b0 = float(np.median(y))
    w, b, history = _svr_sgd(
        X, y, w0, b0, config.epsilon, lam, config.learning_rate, config.epochs, seed % (2**32)
    )
    params = SVRParams(
        tuple(float(v) for v in w),
        float(b),
        config.epsilon,
        config.C,
        config.epochs,
        config.learning_rate,
    )
    return params, history
