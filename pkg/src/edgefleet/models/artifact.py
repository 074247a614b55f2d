"""Versioned model artifacts and their checksummed text format (``.mdl``).

Layout::

    format_version: 1
    algorithm: RFR
    version: 4
    room: A10
    trained_at: 2020-03-15T00:00:00Z
    window_start: 2020-03-01T00:00:00Z
    window_end: 2020-03-15T00:00:00Z
    cv_rmse: 5.02
    test_rmse: 5.875
    checksum: 1c291ca3
    ---
    scaler.means f8 6: ...
    scaler.std_devs f8 6: ...
    <algorithm blocks>

``checksum`` is the CRC32 (8 hex digits) of the UTF-8 body after the ``---``
line. Body lines are ``name dtype shape: values`` with dtype in {f8, i8, str},
shape as ``6`` or ``64x6``, and floats written with repr() so they parse back
bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import CorruptArtifact, FormatVersionMismatch
from ..pipeline import N_FEATURES, FeatureVector
from ..timefmt import format_instant, parse_instant
from .elm import ELMParams
from .forest import RFRParams, Tree
from .linear import MLRParams, SVRParams
from .scaler import ScalerParams
from .training import Algorithm, ModelParams, algorithm_of

FORMAT_VERSION = 1
ARTIFACT_SUFFIX = ".mdl"
_SEPARATOR = "---"
_HEADER_KEYS = (
    "format_version",
    "algorithm",
    "version",
    "room",
    "trained_at",
    "window_start",
    "window_end",
    "cv_rmse",
    "test_rmse",
    "checksum",
)


@dataclass(frozen=True)
class ModelArtifact:
    """Scaler + fitted regressor + training metadata. ``version`` 0 means unregistered."""

    version: int
    algorithm: Algorithm
    scaler: ScalerParams
    params: ModelParams
    trained_at: int
    training_window: tuple[int, int]
    cv_rmse: float
    test_rmse: float
    room: str

    def __post_init__(self) -> None:
        if algorithm_of(self.params) is not self.algorithm:
            raise ValueError(f"{self.algorithm.value} artifact carries {type(self.params).__name__}")
        if not (self.cv_rmse >= 0 and self.test_rmse >= 0):
            raise ValueError("artifact RMSE metadata must be non-negative")
        start, end = self.training_window
        if not start < end:
            raise ValueError("training window start must precede its end")

    def with_version(self, version: int) -> ModelArtifact:
        return dataclasses.replace(self, version=version)

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
        return self.params.predict(self.scaler.transform(X))


def predict(artifact: ModelArtifact, x: FeatureVector | Sequence[float]) -> float:
    values = x.values if isinstance(x, FeatureVector) else x
    return float(artifact.predict_many(np.asarray(values, dtype=np.float64).reshape(1, -1))[0])


# --------------------------------------------------------------------------- encoding


def _fmt(v: float) -> str:
    return repr(float(v))


def _block(name: str, values: np.ndarray | Sequence, dtype: str) -> str:
    arr = np.asarray(values)
    shape = "x".join(str(s) for s in arr.shape) if arr.ndim else "1"
    flat = arr.ravel()
    if dtype == "f8":
        text = " ".join(_fmt(v) for v in flat)
    elif dtype == "i8":
        text = " ".join(str(int(v)) for v in flat)
    else:
        text = " ".join(str(v) for v in flat)
    return f"{name} {dtype} {shape}: {text}"


def _param_blocks(params: ModelParams) -> list[str]:
    if isinstance(params, MLRParams):
        return [
            _block("mlr.weights", params.weights, "f8"),
            _block("mlr.intercept", [params.intercept], "f8"),
        ]
    if isinstance(params, SVRParams):
        return [
            _block("svr.weights", params.weights, "f8"),
            _block("svr.intercept", [params.intercept], "f8"),
            _block("svr.epsilon", [params.epsilon], "f8"),
            _block("svr.C", [params.C], "f8"),
            _block("svr.epochs", [params.epochs], "i8"),
            _block("svr.learning_rate", [params.learning_rate], "f8"),
        ]
    if isinstance(params, ELMParams):
        return [
            _block("elm.activation", [params.activation], "str"),
            _block("elm.hidden_size", [params.hidden_size], "i8"),
            _block("elm.seed", [params.seed], "i8"),
            _block("elm.input_weights", params.input_weights, "f8"),
            _block("elm.input_biases", params.input_biases, "f8"),
            _block("elm.output_weights", params.output_weights, "f8"),
            _block("elm.output_bias", [params.output_bias], "f8"),
        ]
    lines = [
        _block("rfr.n_trees", [params.n_trees], "i8"),
        _block("rfr.max_depth", [params.max_depth], "i8"),
        _block("rfr.min_leaf", [params.min_leaf], "i8"),
        _block("rfr.max_features", [params.max_features], "i8"),
        _block("rfr.seed", [params.seed], "i8"),
        _block("rfr.tree_count", [len(params.trees)], "i8"),
    ]
    for i, tree in enumerate(params.trees):
        lines += [
            _block(f"rfr.tree.{i}.feature", tree.feature, "i8"),
            _block(f"rfr.tree.{i}.threshold", tree.threshold, "f8"),
            _block(f"rfr.tree.{i}.left", tree.left, "i8"),
            _block(f"rfr.tree.{i}.right", tree.right, "i8"),
            _block(f"rfr.tree.{i}.value", tree.value, "f8"),
        ]
    return lines


def serialize(artifact: ModelArtifact) -> bytes:
    body_lines = [
        _block("scaler.means", artifact.scaler.means, "f8"),
        _block("scaler.std_devs", artifact.scaler.std_devs, "f8"),
        *_param_blocks(artifact.params),
    ]
    body = "\n".join(body_lines) + "\n"
    header = {
        "format_version": str(FORMAT_VERSION),
        "algorithm": artifact.algorithm.value,
        "version": str(artifact.version),
        "room": artifact.room,
        "trained_at": format_instant(artifact.trained_at),
        "window_start": format_instant(artifact.training_window[0]),
        "window_end": format_instant(artifact.training_window[1]),
        "cv_rmse": _fmt(artifact.cv_rmse),
        "test_rmse": _fmt(artifact.test_rmse),
        "checksum": checksum(body.encode("utf-8")),
    }
    head = "".join(f"{k}: {header[k]}\n" for k in _HEADER_KEYS)
    return (head + _SEPARATOR + "\n" + body).encode("utf-8")


def checksum(body: bytes) -> str:
    return f"{zlib.crc32(body) & 0xFFFFFFFF:08x}"


# --------------------------------------------------------------------------- decoding


def _split(data: bytes) -> tuple[dict[str, str], str]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptArtifact("artifact is not valid UTF-8") from exc
    marker = "\n" + _SEPARATOR + "\n"
    head, sep, body = text.partition(marker)
    header: dict[str, str] = {}
    for line in head.splitlines():
        key, colon, value = line.partition(": ")
        if not colon:
            raise CorruptArtifact(f"malformed header line {line!r}")
        header[key.strip()] = value
    version = header.get("format_version")
    if version is not None and version.strip() != str(FORMAT_VERSION):
        raise FormatVersionMismatch(
            f"artifact format_version {version.strip()} is not supported (expected {FORMAT_VERSION})"
        )
    if not sep:
        raise CorruptArtifact("artifact has no body separator")
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise CorruptArtifact(f"artifact header lacks {missing}")
    return header, body


def verify(data: bytes) -> None:
    """Raise FormatVersionMismatch or CorruptArtifact unless ``data`` is intact."""
    header, body = _split(data)
    if checksum(body.encode("utf-8")) != header["checksum"].strip():
        raise CorruptArtifact("artifact checksum mismatch")


def _parse_blocks(body: str) -> dict[str, np.ndarray]:
    blocks: dict[str, np.ndarray] = {}
    for line in body.splitlines():
        if not line:
            continue
        spec, colon, payload = line.partition(":")
        parts = spec.split()
        if not colon or len(parts) != 3:
            raise CorruptArtifact(f"malformed body line starting {line[:40]!r}")
        name, dtype, shape_text = parts
        shape = tuple(int(s) for s in shape_text.split("x"))
        tokens = payload.split()
        if dtype == "f8":
            arr = np.array([float(t) for t in tokens], dtype=np.float64)
        elif dtype == "i8":
            arr = np.array([int(t) for t in tokens], dtype=np.int64)
        elif dtype == "str":
            arr = np.array(tokens, dtype=object)
        else:
            raise CorruptArtifact(f"unknown block dtype {dtype!r}")
        if arr.size != math.prod(shape):
            raise CorruptArtifact(f"block {name} has {arr.size} values for shape {shape_text}")
        blocks[name] = arr.reshape(shape)
    return blocks


def _scalar(blocks: dict[str, np.ndarray], name: str):
    return blocks[name].ravel()[0]


def _params_from_blocks(algorithm: Algorithm, b: dict[str, np.ndarray]) -> ModelParams:
    if algorithm is Algorithm.MLR:
        return MLRParams(tuple(float(v) for v in b["mlr.weights"]), float(_scalar(b, "mlr.intercept")))
    if algorithm is Algorithm.SVR:
        return SVRParams(
            tuple(float(v) for v in b["svr.weights"]),
            float(_scalar(b, "svr.intercept")),
            float(_scalar(b, "svr.epsilon")),
            float(_scalar(b, "svr.C")),
            int(_scalar(b, "svr.epochs")),
            float(_scalar(b, "svr.learning_rate")),
        )
    if algorithm is Algorithm.ELM:
        return ELMParams(
            input_weights=b["elm.input_weights"].astype(np.float64),
            input_biases=b["elm.input_biases"].astype(np.float64),
            output_weights=b["elm.output_weights"].astype(np.float64),
            output_bias=float(_scalar(b, "elm.output_bias")),
            activation=str(_scalar(b, "elm.activation")),
            hidden_size=int(_scalar(b, "elm.hidden_size")),
            seed=int(_scalar(b, "elm.seed")),
        )
    trees = tuple(
        Tree(
            b[f"rfr.tree.{i}.feature"],
            b[f"rfr.tree.{i}.threshold"],
            b[f"rfr.tree.{i}.left"],
            b[f"rfr.tree.{i}.right"],
            b[f"rfr.tree.{i}.value"],
        )
        for i in range(int(_scalar(b, "rfr.tree_count")))
    )
    return RFRParams(
        trees,
        int(_scalar(b, "rfr.n_trees")),
        int(_scalar(b, "rfr.max_depth")),
        int(_scalar(b, "rfr.min_leaf")),
        int(_scalar(b, "rfr.max_features")),
        int(_scalar(b, "rfr.seed")),
    )


def deserialize(data: bytes) -> ModelArtifact:
    header, body = _split(data)
    if checksum(body.encode("utf-8")) != header["checksum"].strip():
        raise CorruptArtifact("artifact checksum mismatch")
    try:
        algorithm = Algorithm.parse(header["algorithm"])
        blocks = _parse_blocks(body)
        scaler = ScalerParams(
            tuple(float(v) for v in blocks["scaler.means"]),
            tuple(float(v) for v in blocks["scaler.std_devs"]),
        )
        return ModelArtifact(
            version=int(header["version"]),
            algorithm=algorithm,
            scaler=scaler,
            params=_params_from_blocks(algorithm, blocks),
            trained_at=parse_instant(header["trained_at"]),
            training_window=(parse_instant(header["window_start"]), parse_instant(header["window_end"])),
            cv_rmse=float(header["cv_rmse"]),
            test_rmse=float(header["test_rmse"]),
            room=header["room"],
        )
    except CorruptArtifact:
        raise
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise CorruptArtifact(f"artifact body is inconsistent: {exc}") from exc
