"""Per-device runtime: streaming inference (process 1) and daily drift checks (process 2)."""

from __future__ import annotations

import bisect
import logging
import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArtifactVerificationFailed,
    CorruptArtifact,
    FormatVersionMismatch,
    StorageFailure,
    UnknownVersion,
)
from .models import ModelArtifact, deserialize, predict, rmse
from .pipeline import (
    LABEL_SHIFT,
    MAX_STEP_GAP_MS,
    PredictionLog,
    PredictionRow,
    SensorReading,
    is_valid,
)
from .registry import AuditEvent, ModelRegistry
from .supervision import DRIFT_THRESHOLD, AlarmKind, Supervisor
from .timefmt import DAY_MS, format_instant
from .transport import Broker, decode_control, drift_topic, encode_drift

log = logging.getLogger(__name__)

MIN_EVALUATED = 12


@dataclass(frozen=True)
class DriftReport:
    device_id: str
    evaluated_at: int
    window: tuple[int, int]
    daily_rmse: float  # NaN when too few matured predictions
    n_evaluated: int
    triggered: bool
    model_version: int

    @property
    def insufficient(self) -> bool:
        return self.n_evaluated < MIN_EVALUATED


def drift_verdict(
    daily_rmse: float,
    n_evaluated: int,
    threshold: float = DRIFT_THRESHOLD,
    min_evaluated: int = MIN_EVALUATED,
) -> bool:
    """Inclusive threshold, gated on having enough matured predictions."""
    return n_evaluated >= min_evaluated and not math.isnan(daily_rmse) and daily_rmse >= threshold


class EdgeAgent:
    """One edge device serving one room.

    Inference and model swaps share a lock, so every logged row carries exactly
    the version that produced it. The agent remembers the valid readings it has
    seen so process 2 can match each forecast with the reading three steps later.
    """

    def __init__(
        self,
        device_id: str,
        room: str,
        registry: ModelRegistry,
        supervisor: Supervisor,
        log_: PredictionLog,
        broker: Broker | None = None,
        drift_threshold: float = DRIFT_THRESHOLD,
        min_evaluated: int = MIN_EVALUATED,
        window_ms: int = DAY_MS,
    ) -> None:
        self.device_id = device_id
        self.room = room
        self.registry = registry
        self.supervisor = supervisor
        self.log = log_
        self.broker = broker
        self.drift_threshold = drift_threshold
        self.min_evaluated = min_evaluated
        self.window_ms = window_ms
        self.current_model: ModelArtifact | None = None
        self.last_drift_check: int | None = None
        self.inference_count = 0
        self.dropped_readings = 0
        self._lock = threading.Lock()
        self._seen: set[int] = set()
        # valid readings in time order (timestamp, air_quality_static)
        self._ts: list[int] = []
        self._aq: list[float] = []
        # forecasts in time order (timestamp, forecast)
        self._pred_ts: list[int] = []
        self._pred: list[float] = []
        supervisor.register_device(device_id, room)

    @property
    def model_version(self) -> int | None:
        return None if self.current_model is None else self.current_model.version

    # ------------------------------------------------------------------ process 1

    def process1_step(self, reading: SensorReading, now: int | None = None) -> PredictionRow | None:
        """Forecast, log and alarm-check one reading. Returns None when it is skipped."""
        if reading.room != self.room:
            raise ValueError(f"reading for room {reading.room} delivered to agent of {self.room}")
        at = reading.timestamp if now is None else now
        if reading.timestamp in self._seen:
            # at-least-once transports may redeliver; the first copy wins
            self.dropped_readings += 1
            return None
        if not is_valid(reading):
            self._seen.add(reading.timestamp)
            self.dropped_readings += 1
            return None
        with self._lock:
            model = self.current_model
            if model is None:
                self.dropped_readings += 1
                return None
            forecast = predict(model, reading.features())
            row = PredictionRow(reading, forecast, model.version, at)
            try:
                self.log.append(row)
            except StorageFailure:
                log.exception("%s: dropping reading %s", self.device_id, format_instant(reading.timestamp))
                self.dropped_readings += 1
                return None
        self._seen.add(reading.timestamp)
        self._remember(reading.timestamp, reading.air_quality_static, forecast)
        self.inference_count += 1
        self.supervisor.check_air_quality_alarm(
            forecast, self.room, at, device_id=self.device_id, model_version=row.model_version
        )
        return row

    def _remember(self, ts: int, aq: float, forecast: float) -> None:
        if self._ts and ts < self._ts[-1]:
            i = bisect.bisect_left(self._ts, ts)
            self._ts.insert(i, ts)
            self._aq.insert(i, aq)
            j = bisect.bisect_left(self._pred_ts, ts)
            self._pred_ts.insert(j, ts)
            self._pred.insert(j, forecast)
        else:
            self._ts.append(ts)
            self._aq.append(aq)
            self._pred_ts.append(ts)
            self._pred.append(forecast)

    # ------------------------------------------------------------------ process 2

    def matured_pairs(self, start: int, end: int) -> tuple[np.ndarray, np.ndarray]:
        """(forecasts, actuals) for forecasts made in [start, end) whose outcome is known by ``end``."""
        preds, actuals = [], []
        i0 = bisect.bisect_left(self._pred_ts, start)
        i1 = bisect.bisect_left(self._pred_ts, end)
        for j in range(i0, i1):
            ts = self._pred_ts[j]
            k = bisect.bisect_left(self._ts, ts)
            target = k + LABEL_SHIFT
            if target >= len(self._ts) or self._ts[target] > end:
                continue
            if any(self._ts[m + 1] - self._ts[m] > MAX_STEP_GAP_MS for m in range(k, target)):
                continue
            preds.append(self._pred[j])
            actuals.append(self._aq[target])
        return np.asarray(preds), np.asarray(actuals)

    def process2_evaluate(self, now: int) -> DriftReport:
        """Daily check over the previous window; publishes the report and audits it."""
        start = now - self.window_ms
        preds, actuals = self.matured_pairs(start, now)
        n = len(preds)
        daily = rmse(preds, actuals) if n else float("nan")
        triggered = drift_verdict(daily, n, self.drift_threshold, self.min_evaluated)
        version = self.model_version if self.model_version is not None else 0
        report = DriftReport(self.device_id, now, (start, now), daily, n, triggered, version)
        self.last_drift_check = now
        self.registry.audit.append(
            now,
            AuditEvent.DRIFT,
            self.room,
            device_id=self.device_id,
            model_version=version,
            rmse=daily if n >= self.min_evaluated else "insufficient",
            n_evaluated=n,
            triggered=triggered,
            threshold=self.drift_threshold,
        )
        if triggered:
            self.supervisor.raise_alarm(
                AlarmKind.MODEL_DRIFT, now, self.room, daily, self.drift_threshold, device_id=self.device_id
            )
        if self.broker is not None:
            self.broker.publish(
                drift_topic(self.device_id),
                encode_drift(daily, triggered, version, n_evaluated=n, evaluated_at=format_instant(now)),
            )
        return report

    # ------------------------------------------------------------------ deployment

    def swap_model(self, new_artifact: ModelArtifact | bytes, at: int) -> bool:
        """Atomically replace the live model; on any verification failure keep the old one."""
        version = None
        try:
            if isinstance(new_artifact, (bytes, bytearray)):
                artifact = deserialize(bytes(new_artifact))
            else:
                artifact = new_artifact
            version = artifact.version
            if artifact.room != self.room:
                raise ArtifactVerificationFailed(
                    f"artifact v{artifact.version} targets room {artifact.room}, device serves {self.room}"
                )
            if not self.registry.has_version(artifact.version):
                raise ArtifactVerificationFailed(f"artifact v{artifact.version} is not registered")
        except (CorruptArtifact, FormatVersionMismatch, ArtifactVerificationFailed) as exc:
            self._deploy_failed(version, at, str(exc))
            return False
        with self._lock:
            self.registry.record_deploy(artifact.version, self.room, self.device_id, at)
            self.current_model = artifact
        return True

    def deploy_version(self, version: int, at: int) -> bool:
        """Fetch ``version`` from the registry and swap it in."""
        try:
            data = self.registry.fetch_bytes(version)
        except (UnknownVersion, CorruptArtifact, FormatVersionMismatch) as exc:
            self._deploy_failed(version, at, str(exc))
            return False
        return self.swap_model(data, at)

    def handle_control(self, payload: bytes, at: int) -> bool:
        command, version = decode_control(payload)
        if command != "deploy":
            log.warning("%s: ignoring unknown control command %r", self.device_id, command)
            return False
        return self.deploy_version(version, at)

    def _deploy_failed(self, version: int | None, at: int, reason: str) -> None:
        log.error("%s: deploy of v%s refused: %s", self.device_id, version, reason)
        self.registry.record_failed_deploy(version or 0, self.room, self.device_id, at, reason)
        self.supervisor.raise_alarm(
            AlarmKind.DEPLOY_FAILURE, at, self.room, float(version or 0), 0.0, device_id=self.device_id
        )
