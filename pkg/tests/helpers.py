"""Builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from edgefleet.models import (
    Algorithm,
    ELMParams,
    MLRParams,
    ModelArtifact,
    RFRParams,
    ScalerParams,
    SVRParams,
    Tree,
)
from edgefleet.models.forest import LEAF
from edgefleet.pipeline import SensorReading
from edgefleet.timefmt import MINUTE_MS, parse_instant

T0 = parse_instant("2023-04-01T00:00:00Z")
STEP = 5 * MINUTE_MS


def make_reading(
    t: int = T0,
    aq: float = 50.0,
    room: str = "A10",
    light: float = 120.0,
    humidity: float = 38.0,
    iaq: float = 3.0,
    pressure: float = 1012.0,
    temperature: float = 21.5,
) -> SensorReading:
    return SensorReading(
        timestamp=t,
        name=f"sensor-{room.lower()}",
        room=room,
        room_type="Office room",
        floor="1",
        air_quality=aq,
        air_quality_static=aq,
        ambient_light=light,
        humidity=humidity,
        iaq_accuracy=iaq,
        iaq_accuracy_static=iaq,
        pressure=pressure,
        temperature=temperature,
    )


def series(values, start: int = T0, step: int = STEP, room: str = "A10") -> list[SensorReading]:
    return [make_reading(start + i * step, float(v), room=room) for i, v in enumerate(values)]


def mlr_artifact(
    weights=(1.0, 0, 0, 0, 0, 0),
    intercept: float = 0.0,
    room: str = "A10",
    version: int = 0,
) -> ModelArtifact:
    """Linear model on unscaled features, handy for exact forward-pass checks."""
    return ModelArtifact(
        version=version,
        algorithm=Algorithm.MLR,
        scaler=ScalerParams.identity(),
        params=MLRParams(tuple(float(w) for w in weights), float(intercept)),
        trained_at=T0,
        training_window=(T0 - 10 * STEP, T0),
        cv_rmse=1.0,
        test_rmse=1.0,
        room=room,
    )


def linear_dataset(n: int, seed: int = 0, noise: float = 0.0):
    """Six raw features with realistic scales and y an exact linear function of them."""
    rng = np.random.default_rng(seed)
    X = np.column_stack(
        [
            rng.uniform(20, 120, n),
            rng.uniform(0, 600, n),
            rng.uniform(25, 50, n),
            rng.integers(1, 4, n).astype(float),
            rng.uniform(1000, 1025, n),
            rng.uniform(18, 26, n),
        ]
    )
    w = np.array([0.6, 0.01, -0.4, 2.0, 0.05, 3.0])
    b = -20.0
    y = X @ w + b + noise * rng.standard_normal(n)
    return X, y, w, b


# criterion number -> (passed, description); printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def random_tree(rng: np.random.Generator, max_depth: int = 4) -> Tree:
    """Random valid flat tree: children are appended after their parent."""
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(depth: int) -> int:
        node = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(rng.normal(60, 20)))
        if depth < max_depth and rng.random() < 0.7:
            feature[node] = int(rng.integers(0, 6))
            threshold[node] = float(rng.normal())
            left[node] = grow(depth + 1)
            right[node] = grow(depth + 1)
        return node

    grow(0)
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
    )


def random_artifact(rng: np.random.Generator, algorithm: Algorithm) -> ModelArtifact:
    """An artifact with arbitrary (untrained) parameters of the given family."""
    if algorithm is Algorithm.MLR:
        params = MLRParams(tuple(rng.normal(size=6).tolist()), float(rng.normal(50, 10)))
    elif algorithm is Algorithm.SVR:
        params = SVRParams(tuple(rng.normal(size=6).tolist()), float(rng.normal(50, 10)), 0.1, 1.0, 200, 0.01)
    elif algorithm is Algorithm.ELM:
        h = int(rng.integers(1, 80))
        params = ELMParams(
            rng.uniform(-1, 1, (h, 6)), rng.uniform(-1, 1, h), rng.normal(size=h), float(rng.normal()),
            "tanh", h, int(rng.integers(0, 2**31)),
        )
    else:
        n = int(rng.integers(1, 12))
        params = RFRParams(tuple(random_tree(rng) for _ in range(n)), n, 4, 5, 2, int(rng.integers(0, 2**31)))
    start = T0 - int(rng.integers(1, 10**6)) * STEP
    return ModelArtifact(
        version=int(rng.integers(0, 1000)),
        algorithm=algorithm,
        scaler=ScalerParams(tuple(rng.normal(50, 30, 6).tolist()), tuple(rng.uniform(0.1, 100, 6).tolist())),
        params=params,
        trained_at=T0,
        training_window=(start, T0),
        cv_rmse=float(rng.uniform(0, 20)),
        test_rmse=float(rng.uniform(0, 20)),
        room=str(rng.choice(["A10", "A29", "A30"])),
    )
