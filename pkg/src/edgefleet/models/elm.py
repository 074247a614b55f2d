from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SingularSystem

ACTIVATIONS = {"tanh": np.tanh}


@dataclass(frozen=True)
class ELMConfig:
    hidden_size: int = 64
    ridge: float = 1e-6
    activation: str = "tanh"


@dataclass(frozen=True, eq=False)
class ELMParams:
    """Single hidden layer with fixed random projection; only the output layer is fitted."""

    input_weights: np.ndarray  # (hidden_size, n_features)
    input_biases: np.ndarray  # (hidden_size,)
    output_weights: np.ndarray  # (hidden_size,)
    output_bias: float
    activation: str
    hidden_size: int
    seed: int

    def __post_init__(self) -> None:
        if self.output_weights.shape != (self.hidden_size,):
            raise ValueError("ELM output weights must have one entry per hidden unit")
        if self.input_weights.shape[0] != self.hidden_size:
            raise ValueError("ELM input weights must have one row per hidden unit")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def hidden(self, Xs: np.ndarray) -> np.ndarray:
        act = ACTIVATIONS[self.activation]
        return act(np.asarray(Xs, dtype=np.float64) @ self.input_weights.T + self.input_biases)

    def predict(self, Xs: np.ndarray) -> np.ndarray:
        return self.hidden(Xs) @ self.output_weights + self.output_bias

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ELMParams):
            return NotImplemented
        return (
            self.activation == other.activation
            and self.hidden_size == other.hidden_size
            and self.seed == other.seed
            and self.output_bias == other.output_bias
            and np.array_equal(self.input_weights, other.input_weights)
            and np.array_equal(self.input_biases, other.input_biases)
            and np.array_equal(self.output_weights, other.output_weights)
        )


def fit_elm(X: np.ndarray, y: np.ndarray, config: ELMConfig = ELMConfig(), seed: int = 0) -> ELMParams:
    rng = np.random.default_rng(seed)
    h = config.hidden_size
    W = rng.uniform(-1.0, 1.0, size=(h, X.shape[1]))
    b = rng.uniform(-1.0, 1.0, size=h)
    H = ACTIVATIONS[config.activation](X @ W.T + b)
    # trailing ones column fits the output bias alongside the hidden weights
    A = np.hstack([H, np.ones((H.shape[0], 1))])
    gram = A.T @ A + config.ridge * np.eye(h + 1)
    try:
        beta = np.linalg.solve(gram, A.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"ELM ridge system unsolvable: {exc}") from exc
    if not np.all(np.isfinite(beta)):
        raise SingularSystem("ELM ridge solve produced non-finite weights")
    return ELMParams(W, b, beta[:h].copy(), float(beta[h]), config.activation, h, seed)
