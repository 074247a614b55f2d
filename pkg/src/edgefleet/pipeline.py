"""DataOps layer: sensor readings, cleaning, label construction and prediction logs."""

from __future__ import annotations

import csv
import io
import math
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    InsufficientData,
    MalformedField,
    MissingField,
    StorageFailure,
    UnknownModelVersion,
)
from .timefmt import MINUTE_MS, format_instant, parse_instant

READING_COLUMNS = (
    "timestamp",
    "name",
    "room",
    "room_type",
    "floor",
    "air_quality",
    "air_quality_static",
    "ambient_light",
    "humidity",
    "iaq_accuracy",
    "iaq_accuracy_static",
    "pressure",
    "temperature",
)
STRING_COLUMNS = ("name", "room", "room_type", "floor")
NUMERIC_COLUMNS = tuple(c for c in READING_COLUMNS[1:] if c not in STRING_COLUMNS)

# Model input order. Never reorder: serialized scalers and weights depend on it.
FEATURE_NAMES = (
    "air_quality_static",
    "ambient_light",
    "humidity",
    "iaq_accuracy_static",
    "pressure",
    "temperature",
)
N_FEATURES = len(FEATURE_NAMES)

PREDICTION_COLUMNS = READING_COLUMNS + ("predicted_future_aq", "model_version", "predicted_at")

AQI_MIN = 0.0
AQI_MAX = 500.0
LABEL_SHIFT = 3
SAMPLING_INTERVAL_MS = 5 * MINUTE_MS
MAX_STEP_GAP_MS = 7 * MINUTE_MS + 30_000  # 1.5x the sampling cadence


def format_float(value: float) -> str:
    # repr is the shortest round-trip-exact decimal; adding 0.0 folds -0.0 into 0.0
    return repr(float(value) + 0.0)


@dataclass(frozen=True)
class SensorReading:
    timestamp: int
    name: str
    room: str
    room_type: str
    floor: str
    air_quality: float
    air_quality_static: float
    ambient_light: float
    humidity: float
    iaq_accuracy: float
    iaq_accuracy_static: float
    pressure: float
    temperature: float

    def features(self) -> FeatureVector:
        return FeatureVector(
            values=tuple(getattr(self, n) for n in FEATURE_NAMES),
            timestamp=self.timestamp,
            room=self.room,
        )

    def to_record(self) -> dict[str, str]:
        record = {"timestamp": format_instant(self.timestamp)}
        for col in READING_COLUMNS[1:]:
            value = getattr(self, col)
            record[col] = value if col in STRING_COLUMNS else format_float(value)
        return record


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    timestamp: int
    room: str

    def __post_init__(self) -> None:
        if len(self.values) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} feature values, got {len(self.values)}")


@dataclass(frozen=True)
class LabeledExample:
    features: FeatureVector
    label: float


@dataclass(frozen=True)
class PredictionRow:
    reading: SensorReading
    predicted_future_aq: float
    model_version: int
    predicted_at: int

    def to_record(self) -> dict[str, str]:
        record = self.reading.to_record()
        record["predicted_future_aq"] = format_float(self.predicted_future_aq)
        record["model_version"] = str(self.model_version)
        record["predicted_at"] = format_instant(self.predicted_at)
        return record


def parse_reading(raw: Mapping[str, object]) -> SensorReading:
    """Build a typed reading from a field map such as a CSV row or a decoded payload."""
    values: dict[str, object] = {}
    for col in READING_COLUMNS:
        if col not in raw or raw[col] is None:
            raise MissingField(f"missing field {col!r}")
        value = raw[col]
        if col == "timestamp":
            values[col] = value if isinstance(value, int) else parse_instant(str(value))
        elif col in STRING_COLUMNS:
            values[col] = str(value)
        else:
            try:
                values[col] = float(value)  # type: ignore[arg-type]
            except (TypeError, ValueError) as exc:
                raise MalformedField(f"field {col!r}: cannot parse {value!r} as float") from exc
    return SensorReading(**values)  # type: ignore[arg-type]


def is_valid(reading: SensorReading) -> bool:
    """True when the reading survives the cleaning filters (finite features, AQI in range)."""
    for name in FEATURE_NAMES:
        if not math.isfinite(getattr(reading, name)):
            return False
    return AQI_MIN <= reading.air_quality_static <= AQI_MAX


def clean(series: Iterable[SensorReading]) -> list[SensorReading]:
    """Drop invalid rows, sort by time and keep the first row of each timestamp."""
    ordered = sorted((r for r in series if is_valid(r)), key=lambda r: r.timestamp)
    out: list[SensorReading] = []
    for r in ordered:
        if out and out[-1].timestamp == r.timestamp:
            continue
        out.append(r)
    return out


def label_run_starts(timestamps: np.ndarray) -> np.ndarray:
    """Indices i where readings i..i+3 form a run with every step gap <= 7.5 min."""
    ts = np.asarray(timestamps, dtype=np.int64)
    n = len(ts)
    if n <= LABEL_SHIFT:
        return np.empty(0, dtype=np.int64)
    ok_step = np.diff(ts) <= MAX_STEP_GAP_MS
    ok = ok_step[: n - LABEL_SHIFT].copy()
    for k in range(1, LABEL_SHIFT):
        ok &= ok_step[k : n - LABEL_SHIFT + k]
    return np.flatnonzero(ok)


def build_training_set(series: Sequence[SensorReading]) -> list[LabeledExample]:
    """Pair each reading with the air_quality_static observed three steps (15 min) later."""
    starts = label_run_starts(np.array([r.timestamp for r in series], dtype=np.int64))
    if len(starts) == 0:
        raise InsufficientData(
            f"need at least {LABEL_SHIFT + 1} consecutive readings, got {len(series)}"
        )
    return [
        LabeledExample(series[i].features(), series[i + LABEL_SHIFT].air_quality_static)
        for i in starts
    ]


def to_arrays(examples: Sequence[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([e.features.values for e in examples], dtype=np.float64).reshape(-1, N_FEATURES)
    y = np.array([e.label for e in examples], dtype=np.float64)
    return X, y


# --------------------------------------------------------------------------- CSV I/O


def read_readings_csv(path: str | os.PathLike) -> list[SensorReading]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in READING_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise MissingField(f"reading CSV lacks columns {missing}")
        return [parse_reading(row) for row in reader]


def write_readings_csv(path: str | os.PathLike, readings: Iterable[SensorReading]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=READING_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in readings:
            writer.writerow(r.to_record())


def parse_prediction_row(record: Mapping[str, str]) -> PredictionRow:
    try:
        return PredictionRow(
            reading=parse_reading(record),
            predicted_future_aq=float(record["predicted_future_aq"]),
            model_version=int(record["model_version"]),
            predicted_at=parse_instant(record["predicted_at"]),
        )
    except KeyError as exc:
        raise MissingField(f"missing field {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise MalformedField(str(exc)) from exc


def read_prediction_log(path: str | os.PathLike) -> list[PredictionRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [parse_prediction_row(row) for row in csv.DictReader(fh)]


class PredictionLog:
    """Append-only per-device CSV of readings joined with their forecasts.

    ``version_known`` guards referential integrity: rows stamped with a model
    version it rejects raise UnknownModelVersion and are not written.
    """

    def __init__(
        self,
        path: str | os.PathLike,
        version_known: Callable[[int], bool] | None = None,
    ) -> None:
        self.path = Path(path)
        self._version_known = version_known
        self._lock = threading.Lock()
        self._count = 0
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fresh = not self.path.exists() or self.path.stat().st_size == 0
            self._fh = open(self.path, "a", newline="", encoding="utf-8")
            if fresh:
                self._write_line(PREDICTION_COLUMNS)
            else:
                with open(self.path, encoding="utf-8") as fh:
                    self._count = max(sum(1 for _ in fh) - 1, 0)
        except OSError as exc:
            raise StorageFailure(f"cannot open prediction log {self.path}: {exc}") from exc

    def _write_line(self, values: Sequence[str]) -> None:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(values)
        self._fh.write(buf.getvalue())
        self._fh.flush()

    def append(self, row: PredictionRow) -> int:
        """Write one row and return the number of rows now in the log."""
        if self._version_known is not None and not self._version_known(row.model_version):
            raise UnknownModelVersion(f"model version {row.model_version} is not registered")
        record = row.to_record()
        with self._lock:
            try:
                self._write_line([record[c] for c in PREDICTION_COLUMNS])
            except (OSError, ValueError) as exc:
                raise StorageFailure(f"append to {self.path} failed: {exc}") from exc
            self._count += 1
            return self._count

    def __len__(self) -> int:
        return self._count

    def rows(self) -> list[PredictionRow]:
        return read_prediction_log(self.path)

    def __iter__(self) -> Iterator[PredictionRow]:
        return iter(self.rows())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> PredictionLog:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def append_prediction(log: PredictionLog, row: PredictionRow) -> int:
    return log.append(row)
