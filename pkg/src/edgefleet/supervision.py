"""Supervision plane: threshold alarms, device telemetry and fleet reports."""

from __future__ import annotations

import csv
import enum
import logging
import math
import os
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import UnknownDevice
from .pipeline import SAMPLING_INTERVAL_MS, PredictionRow, format_float
from .registry import AuditEvent, AuditLog, AuditRecord
from .timefmt import MINUTE_MS, format_instant, parse_instant

log = logging.getLogger(__name__)

AQI_ALERT_THRESHOLD = 100.0
DRIFT_THRESHOLD = 10.0
TELEMETRY_INTERVAL_MS = MINUTE_MS
SILENCE_INTERVALS = 3

VECTOR_CHANNELS = ("accelerometer", "gyroscope", "magnetometer")
SCALAR_CHANNELS = ("humidity", "pressure", "temperature")
TELEMETRY_COLUMNS = (
    "device_id",
    "at",
    *(f"{c}_{axis}" for c in ("accelerometer", "gyroscope") for axis in "xyz"),
    "humidity",
    *(f"magnetometer_{axis}" for axis in "xyz"),
    "pressure",
    "temperature",
    "dropped_readings",
    "inference_count",
)
DRIFT_EVENT_COLUMNS = ("s_no", "date", "device", "deployed_model", "drift_rmse", "retrain_rmse")


class AlarmKind(str, enum.Enum):
    AIR_QUALITY = "air_quality"
    MODEL_DRIFT = "model_drift"
    DEPLOY_FAILURE = "deploy_failure"
    DEVICE_SILENCE = "device_silence"


@dataclass(frozen=True)
class Alarm:
    at: int
    kind: AlarmKind
    source: str  # room or device id
    value: float
    threshold: float


@dataclass(frozen=True)
class TelemetryRecord:
    device_id: str
    at: int
    accelerometer: tuple[float, float, float]
    gyroscope: tuple[float, float, float]
    humidity: float
    magnetometer: tuple[float, float, float]
    pressure: float
    temperature: float
    dropped_readings: int
    inference_count: int

    def to_record(self) -> dict[str, str]:
        out = {"device_id": self.device_id, "at": format_instant(self.at)}
        for name in ("accelerometer", "gyroscope", "magnetometer"):
            for axis, v in zip("xyz", getattr(self, name)):
                out[f"{name}_{axis}"] = format_float(v)
        for name in SCALAR_CHANNELS:
            out[name] = format_float(getattr(self, name))
        out["dropped_readings"] = str(self.dropped_readings)
        out["inference_count"] = str(self.inference_count)
        return out

    @classmethod
    def from_record(cls, rec: Mapping[str, str]) -> TelemetryRecord:
        def vec(name: str) -> tuple[float, float, float]:
            return tuple(float(rec[f"{name}_{a}"]) for a in "xyz")  # type: ignore[return-value]

        return cls(
            device_id=rec["device_id"],
            at=parse_instant(rec["at"]),
            accelerometer=vec("accelerometer"),
            gyroscope=vec("gyroscope"),
            humidity=float(rec["humidity"]),
            magnetometer=vec("magnetometer"),
            pressure=float(rec["pressure"]),
            temperature=float(rec["temperature"]),
            dropped_readings=int(rec["dropped_readings"]),
            inference_count=int(rec["inference_count"]),
        )


def check_air_quality_alarm(
    forecast: float,
    room: str,
    at: int,
    audit: AuditLog | None = None,
    device_id: str | None = None,
    model_version: int | None = None,
    threshold: float = AQI_ALERT_THRESHOLD,
) -> Alarm | None:
    """Alarm iff the forecast is strictly above the AQI threshold."""
    if not forecast > threshold:
        return None
    alarm = Alarm(at, AlarmKind.AIR_QUALITY, room, float(forecast), threshold)
    if audit is not None:
        audit.append(
            at,
            AuditEvent.ALARM,
            room,
            device_id=device_id,
            model_version=model_version,
            kind=alarm.kind.value,
            value=alarm.value,
            threshold=threshold,
        )
    return alarm


class Supervisor:
    """Collects alarms and per-device telemetry; every alarm is also an audit record."""

    def __init__(
        self,
        audit: AuditLog,
        telemetry_dir: str | os.PathLike | None = None,
        aqi_threshold: float = AQI_ALERT_THRESHOLD,
        telemetry_interval_ms: int = TELEMETRY_INTERVAL_MS,
        silence_intervals: int = SILENCE_INTERVALS,
    ) -> None:
        self.audit = audit
        self.aqi_threshold = aqi_threshold
        self.telemetry_interval_ms = telemetry_interval_ms
        self.silence_intervals = silence_intervals
        self.alarms: list[Alarm] = []
        self._devices: dict[str, str] = {}  # device -> room
        self._telemetry: dict[str, list[TelemetryRecord]] = {}
        self._silent: set[str] = set()
        self._locks: dict[str, threading.Lock] = {}
        self._alarm_lock = threading.Lock()
        self._telemetry_dir = Path(telemetry_dir) if telemetry_dir is not None else None
        self._writers: dict[str, tuple[object, csv.DictWriter]] = {}

    def register_device(self, device_id: str, room: str) -> None:
        self._devices[device_id] = room
        self._telemetry.setdefault(device_id, [])
        self._locks.setdefault(device_id, threading.Lock())
        if self._telemetry_dir is not None and device_id not in self._writers:
            self._telemetry_dir.mkdir(parents=True, exist_ok=True)
            fh = open(self._telemetry_dir / f"{device_id}_telemetry.csv", "w", newline="", encoding="utf-8")
            writer = csv.DictWriter(fh, fieldnames=TELEMETRY_COLUMNS, lineterminator="\n")
            writer.writeheader()
            self._writers[device_id] = (fh, writer)

    @property
    def devices(self) -> dict[str, str]:
        return dict(self._devices)

    def _raise(self, alarm: Alarm, room: str, device_id: str | None, **detail: object) -> Alarm:
        with self._alarm_lock:
            self.alarms.append(alarm)
        self.audit.append(
            alarm.at,
            AuditEvent.ALARM,
            room,
            device_id=device_id,
            kind=alarm.kind.value,
            value=alarm.value,
            threshold=alarm.threshold,
            **detail,
        )
        log.info("alarm %s at %s for %s: %s", alarm.kind.value, format_instant(alarm.at), alarm.source, alarm.value)
        return alarm

    def check_air_quality_alarm(
        self,
        forecast: float,
        room: str,
        at: int,
        device_id: str | None = None,
        model_version: int | None = None,
    ) -> Alarm | None:
        alarm = check_air_quality_alarm(
            forecast, room, at, self.audit, device_id, model_version, self.aqi_threshold
        )
        if alarm is not None:
            with self._alarm_lock:
                self.alarms.append(alarm)
        return alarm

    def raise_alarm(
        self,
        kind: AlarmKind,
        at: int,
        room: str,
        value: float,
        threshold: float,
        device_id: str | None = None,
        **detail: object,
    ) -> Alarm:
        source = device_id if device_id is not None else room
        return self._raise(Alarm(at, kind, source, float(value), float(threshold)), room, device_id, **detail)

    def ingest_telemetry(self, record: TelemetryRecord) -> bool:
        """Store one record. Returns False (and audits the anomaly) if counters regress."""
        if record.device_id not in self._devices:
            raise UnknownDevice(f"device {record.device_id!r} is not registered")
        room = self._devices[record.device_id]
        with self._locks[record.device_id]:
            series = self._telemetry[record.device_id]
            if series:
                last = series[-1]
                if (
                    record.inference_count < last.inference_count
                    or record.dropped_readings < last.dropped_readings
                ):
                    self.audit.append(
                        record.at,
                        AuditEvent.ALARM,
                        room,
                        device_id=record.device_id,
                        kind="telemetry_anomaly",
                        reason="counter_regression",
                        inference_count=record.inference_count,
                        previous_inference_count=last.inference_count,
                    )
                    return False
                gap = record.at - last.at
                if gap > self.silence_intervals * self.telemetry_interval_ms and record.device_id not in self._silent:
                    self.raise_alarm(
                        AlarmKind.DEVICE_SILENCE,
                        record.at,
                        room,
                        gap / self.telemetry_interval_ms,
                        self.silence_intervals,
                        device_id=record.device_id,
                    )
            self._silent.discard(record.device_id)
            series.append(record)
            if record.device_id in self._writers:
                self._writers[record.device_id][1].writerow(record.to_record())
        return True

    def check_silence(self, now: int) -> list[Alarm]:
        """Alarm once for every device that has been quiet for more than the silence limit."""
        raised = []
        for device_id, room in self._devices.items():
            series = self._telemetry[device_id]
            if not series or device_id in self._silent:
                continue
            gap = now - series[-1].at
            if gap > self.silence_intervals * self.telemetry_interval_ms:
                self._silent.add(device_id)
                raised.append(
                    self.raise_alarm(
                        AlarmKind.DEVICE_SILENCE,
                        now,
                        room,
                        gap / self.telemetry_interval_ms,
                        self.silence_intervals,
                        device_id=device_id,
                    )
                )
        return raised

    def telemetry(self, device_id: str) -> list[TelemetryRecord]:
        if device_id not in self._telemetry:
            raise UnknownDevice(f"device {device_id!r} is not registered")
        return list(self._telemetry[device_id])

    def close(self) -> None:
        for fh, _ in self._writers.values():
            fh.close()  # type: ignore[attr-defined]
        self._writers.clear()


def ingest_telemetry(supervisor: Supervisor, record: TelemetryRecord) -> bool:
    return supervisor.ingest_telemetry(record)


def read_telemetry_csv(path: str | os.PathLike) -> list[TelemetryRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [TelemetryRecord.from_record(r) for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------- reports


@dataclass(frozen=True)
class ChannelSummary:
    minimum: float
    mean: float
    maximum: float


@dataclass
class DeviceSummary:
    device_id: str
    room: str
    model_timeline: list[tuple[int, int]] = field(default_factory=list)
    daily_rmse: list[tuple[int, float]] = field(default_factory=list)
    drift_count: int = 0
    retrain_count: int = 0
    alarm_counts: dict[str, int] = field(default_factory=dict)
    telemetry: dict[str, ChannelSummary] = field(default_factory=dict)
    readings_logged: int = 0
    expected_readings: int = 0

    @property
    def uptime(self) -> float:
        if self.expected_readings == 0:
            return 0.0
        return self.readings_logged / self.expected_readings


@dataclass(frozen=True)
class DriftEvent:
    s_no: int
    at: int
    device_id: str
    deployed_model: str
    drift_rmse: float
    retrain_rmse: float | None


@dataclass
class FleetReport:
    period: tuple[int, int]
    devices: dict[str, DeviceSummary]
    drift_events: list[DriftEvent]

    @property
    def drift_count(self) -> int:
        return sum(d.drift_count for d in self.devices.values())

    @property
    def retrain_count(self) -> int:
        return sum(d.retrain_count for d in self.devices.values())

    @property
    def alarm_count(self) -> int:
        return sum(sum(d.alarm_counts.values()) for d in self.devices.values())


def _summaries(records: Sequence[TelemetryRecord]) -> dict[str, ChannelSummary]:
    channels: dict[str, list[float]] = defaultdict(list)
    for r in records:
        for name in VECTOR_CHANNELS:
            for axis, v in zip("xyz", getattr(r, name)):
                channels[f"{name}_{axis}"].append(v)
        for name in SCALAR_CHANNELS:
            channels[name].append(getattr(r, name))
    return {
        name: ChannelSummary(min(vals), math.fsum(vals) / len(vals), max(vals))
        for name, vals in channels.items()
    }


def build_fleet_report(
    period: tuple[int, int],
    audit: Iterable[AuditRecord],
    prediction_logs: Mapping[str, Sequence[PredictionRow]],
    telemetry: Mapping[str, Sequence[TelemetryRecord]] | None = None,
    sampling_interval_ms: int = SAMPLING_INTERVAL_MS,
    device_rooms: Mapping[str, str] | None = None,
) -> FleetReport:
    """Aggregate stored audit, log and telemetry data over ``[start, end)``."""
    start, end = period
    telemetry = telemetry or {}
    records = list(audit)
    rooms = dict(device_rooms or {})
    for r in records:
        if r.device_id and r.device_id not in rooms and r.event is AuditEvent.DEPLOY:
            rooms[r.device_id] = r.room
    for device_id in prediction_logs:
        if device_id not in rooms:
            rows = prediction_logs[device_id]
            rooms[device_id] = rows[0].reading.room if rows else ""
    in_period = [r for r in records if start <= r.at < end]
    expected = max(0, -(-(end - start) // sampling_interval_ms)) if end > start else 0

    devices: dict[str, DeviceSummary] = {}
    for device_id in sorted(rooms):
        room = rooms[device_id]
        summary = DeviceSummary(device_id, room, expected_readings=expected)
        alarms: Counter[str] = Counter()
        for r in in_period:
            mine = r.device_id == device_id or (r.device_id is None and r.room == room)
            if not mine:
                continue
            if r.event is AuditEvent.DEPLOY and r.model_version is not None:
                summary.model_timeline.append((r.at, r.model_version))
            elif r.event is AuditEvent.DRIFT:
                value = float(r.get("rmse", "nan") or "nan")
                summary.daily_rmse.append((r.at, value))
                if r.get("triggered") == "true":
                    summary.drift_count += 1
            elif r.event is AuditEvent.RETRAIN:
                summary.retrain_count += 1
            elif r.event is AuditEvent.ALARM:
                alarms[r.get("kind", "unknown") or "unknown"] += 1
        summary.alarm_counts = dict(sorted(alarms.items()))
        rows = prediction_logs.get(device_id, ())
        summary.readings_logged = sum(1 for row in rows if start <= row.predicted_at < end)
        tel = [t for t in telemetry.get(device_id, ()) if start <= t.at < end]
        if tel:
            summary.telemetry = _summaries(tel)
        devices[device_id] = summary

    events: list[DriftEvent] = []
    for r in in_period:
        if r.event is not AuditEvent.RETRAIN or r.device_id is None:
            continue
        retrain_rmse = None
        # first full-day evaluation after the new model went live
        for later in records:
            if (
                later.event is AuditEvent.DRIFT
                and later.device_id == r.device_id
                and later.model_version == r.model_version
                and later.at > r.at
            ):
                v = float(later.get("rmse", "nan") or "nan")
                retrain_rmse = None if math.isnan(v) else v
                break
        events.append(
            DriftEvent(
                len(events) + 1,
                r.at,
                r.device_id,
                r.get("algorithm", "") or "",
                float(r.get("drift_rmse", "nan") or "nan"),
                retrain_rmse,
            )
        )
    return FleetReport(period, devices, events)


def _fmt_optional(v: float | None, digits: int = 2) -> str:
    if v is None or math.isnan(v):
        return ""
    return f"{v:.{digits}f}"


def render_summary(report: FleetReport) -> str:
    start, end = report.period
    lines = [
        "Fleet report",
        f"period: {format_instant(start)} .. {format_instant(end)}",
        f"devices: {len(report.devices)}",
        f"triggered drift events: {report.drift_count}",
        f"retrain events: {report.retrain_count}",
        f"alarms: {report.alarm_count}",
        "",
    ]
    for d in report.devices.values():
        rmses = [v for _, v in d.daily_rmse if not math.isnan(v)]
        lines.append(f"[{d.device_id}] room={d.room}")
        lines.append(f"  uptime: {d.uptime:.4f} ({d.readings_logged}/{d.expected_readings} readings)")
        lines.append(f"  drift events: {d.drift_count}  retrains: {d.retrain_count}")
        if rmses:
            lines.append(
                f"  daily rmse: min={min(rmses):.2f} mean={math.fsum(rmses) / len(rmses):.2f} max={max(rmses):.2f}"
            )
        timeline = ", ".join(f"v{v}@{format_instant(at)}" for at, v in d.model_timeline)
        lines.append(f"  model timeline: {timeline or '-'}")
        alarms = ", ".join(f"{k}={n}" for k, n in d.alarm_counts.items())
        lines.append(f"  alarms: {alarms or '-'}")
        for name, s in d.telemetry.items():
            lines.append(f"  telemetry {name}: min={s.minimum:.3f} mean={s.mean:.3f} max={s.maximum:.3f}")
        lines.append("")
    return "\n".join(lines)


def write_report(
    report: FleetReport,
    out_dir: str | os.PathLike,
    telemetry: Mapping[str, Sequence[TelemetryRecord]] | None = None,
    emit_plot_data: bool = False,
) -> list[Path]:
    """Write summary.txt, drift_events.csv and per-device telemetry tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary_path = out / "summary.txt"
    summary_path.write_text(render_summary(report), encoding="utf-8")
    written.append(summary_path)

    drift_path = out / "drift_events.csv"
    with open(drift_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DRIFT_EVENT_COLUMNS)
        for e in report.drift_events:
            w.writerow(
                [
                    e.s_no,
                    format_instant(e.at)[:10],
                    e.device_id,
                    e.deployed_model,
                    _fmt_optional(e.drift_rmse),
                    _fmt_optional(e.retrain_rmse),
                ]
            )
    written.append(drift_path)

    start, end = report.period
    for device_id in report.devices:
        path = out / f"device_{device_id}_telemetry.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=TELEMETRY_COLUMNS, lineterminator="\n")
            w.writeheader()
            for rec in (telemetry or {}).get(device_id, ()):
                if start <= rec.at < end:
                    w.writerow(rec.to_record())
        written.append(path)

    if emit_plot_data:
        plot_dir = out / "plot_data"
        plot_dir.mkdir(exist_ok=True)
        for d in report.devices.values():
            path = plot_dir / f"daily_rmse_{d.device_id}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["date", "daily_rmse", "threshold"])
                for at, v in d.daily_rmse:
                    w.writerow([format_instant(at), _fmt_optional(v, 4), DRIFT_THRESHOLD])
            written.append(path)
            path = plot_dir / f"model_timeline_{d.device_id}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["deployed_at", "model_version"])
                for at, v in d.model_timeline:
                    w.writerow([format_instant(at), v])
            written.append(path)
    return written
