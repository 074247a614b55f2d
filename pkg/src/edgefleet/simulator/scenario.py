"""The full fleet experiment on a simulated clock.

Per room: a sensor publishes a reading every sampling interval, the room's edge
agent forecasts and logs it, the device reports telemetry every minute, and at
each midnight the agent checks the previous day for drift. A drift report that
triggers goes to the fleet controller, which retrains from the registry's
recent data and sends a deploy command back to the device shortly after.

Everything runs on one thread in the order the clock dictates, so a run is a
pure function of its config.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agent import DriftReport, EdgeAgent
from ..errors import EdgeFleetError, InsufficientData
from ..models import (
    chronological_test_rmse,
    evaluate_algorithms,
    fit_artifact,
    select_best,
)
from ..pipeline import (
    PredictionLog,
    SensorReading,
    build_training_set,
    clean,
    read_prediction_log,
    to_arrays,
    write_readings_csv,
)
from ..registry import AuditEvent, DeploymentDecision, ModelRegistry, RetrainPolicy
from ..supervision import Alarm, FleetReport, Supervisor, TelemetryRecord, build_fleet_report, write_report
from ..timefmt import DAY_MS, HOUR_MS, format_instant
from ..transport import (
    Broker,
    Subscription,
    control_topic,
    decode_drift,
    decode_payload,
    decode_reading,
    encode_control,
    encode_payload,
    encode_reading,
    readings_topic,
    telemetry_topic,
)
from .clock import EventKind, SimClock, TimerEvent
from .config import RoomSetup, ScenarioConfig
from .generator import generate_room_series

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetrainEvent:
    at: int
    room: str
    device_id: str
    drift_rmse: float
    decision: DeploymentDecision | None  # None when the window held too little data


@dataclass
class ScenarioResult:
    run_dir: Path
    model_timelines: dict[str, list[tuple[int, int]]]
    drift_reports: list[DriftReport]
    retrains: list[RetrainEvent]
    alarms: list[Alarm]
    report: FleetReport
    paths: dict[str, Path]
    published: dict[str, int] = field(default_factory=dict)

    @property
    def triggered(self) -> list[DriftReport]:
        return [r for r in self.drift_reports if r.triggered]


def room_seed(cfg: ScenarioConfig, index: int) -> int:
    setup = cfg.rooms[index]
    if setup.seed is not None:
        return setup.seed
    seq = np.random.SeedSequence([cfg.seeds["generator"], index])
    return int(seq.generate_state(1)[0])


# accelerometer xyz, gyroscope xyz, humidity, magnetometer xyz, pressure, sensor jitter, board drift
_TELEMETRY_LEVEL = np.array([0.0, 0.0, 9.81, 0.0, 0.0, 0.0, 30.0, 22.0, -5.0, 40.0, 1012.0, 0.0, 0.0])
_TELEMETRY_NOISE = np.array([0.02, 0.02, 0.02, 0.01, 0.01, 0.01, 0.5, 0.5, 0.5, 0.5, 0.3, 0.05, 0.1])


class _Device:
    """Simulated hardware around one agent: its sensor feed and telemetry source."""

    def __init__(self, setup: RoomSetup, agent: EdgeAgent, series: list[SensorReading], first_live: int, rng):
        self.setup = setup
        self.agent = agent
        self.series = series
        self.first_live = first_live
        self.rng = rng
        self.published = 0
        self.readings_sub: Subscription | None = None
        self.control_sub: Subscription | None = None
        self.board_temp = 38.0

    def telemetry(self, at: int) -> TelemetryRecord:
        z = (self.rng.standard_normal(13) * _TELEMETRY_NOISE + _TELEMETRY_LEVEL).tolist()
        self.board_temp += 0.05 * (38.0 - self.board_temp) + z[12]
        return TelemetryRecord(
            device_id=self.agent.device_id,
            at=at,
            accelerometer=(z[0], z[1], z[2]),
            gyroscope=(z[3], z[4], z[5]),
            humidity=z[6],
            magnetometer=(z[7], z[8], z[9]),
            pressure=z[10],
            temperature=self.board_temp + z[11],
            dropped_readings=self.agent.dropped_readings,
            inference_count=self.agent.inference_count,
        )


class FleetController:
    """Cloud side: keeps every room's readings, retrains on drift and orders deploys."""

    def __init__(
        self,
        registry: ModelRegistry,
        broker: Broker,
        clock: SimClock,
        policy: RetrainPolicy,
        deploy_delay: int,
        device_rooms: dict[str, str],
    ) -> None:
        self.registry = registry
        self.broker = broker
        self.clock = clock
        self.policy = policy
        self.deploy_delay = deploy_delay
        self.device_rooms = device_rooms
        self.readings: dict[str, list[SensorReading]] = {room: [] for room in device_rooms.values()}
        self.retrains: list[RetrainEvent] = []
        self.after_publish = lambda ev: None  # delivery hook for control messages
        self._data = broker.subscribe("sensors/+/readings")
        self._drift = broker.subscribe("fleet/+/drift")

    def add_history(self, room: str, readings: list[SensorReading]) -> None:
        self.readings[room].extend(readings)

    def pump(self) -> None:
        for message in self._data.drain():
            reading = decode_reading(message.payload)
            self.readings[reading.room].append(reading)
        for message in self._drift.drain():
            device_id = message.topic.split("/")[1]
            self._on_drift(device_id, decode_drift(message.payload))

    def recent_examples(self, room: str, now: int) -> list:
        start = now - self.policy.window_days * DAY_MS
        window = [r for r in self.readings[room] if start <= r.timestamp <= now]
        return build_training_set(clean(window))

    def _on_drift(self, device_id: str, fields: dict) -> None:
        if not fields["triggered"]:
            return
        now = self.clock.now
        room = self.device_rooms[device_id]
        report = DriftReport(
            device_id,
            now,
            (now - DAY_MS, now),
            float(fields["rmse"]),
            int(fields.get("n_evaluated", 0)),
            True,
            int(fields["model_version"]),
        )
        try:
            decision = self.registry.handle_drift(report, self.recent_examples(room, now), room, now, self.policy)
        except InsufficientData as exc:
            log.warning("%s: retrain skipped: %s", device_id, exc)
            self.retrains.append(RetrainEvent(now, room, device_id, report.daily_rmse, None))
            return
        self.retrains.append(RetrainEvent(now, room, device_id, report.daily_rmse, decision))
        log.info(
            "%s: drift %.2f at %s, retrained %s as v%d",
            device_id,
            report.daily_rmse,
            format_instant(now),
            decision.algorithm.value,
            decision.version,
        )
        self.clock.schedule(
            now + self.deploy_delay,
            EventKind.CONTROL,
            f"deploy:{device_id}",
            lambda ev, d=device_id, v=decision.version: self._send_deploy(ev, d, v),
        )

    def _send_deploy(self, ev: TimerEvent, device_id: str, version: int) -> None:
        self.broker.publish(control_topic(device_id), encode_control(version))
        self.after_publish(ev)


def train_initial_model(
    readings: list[SensorReading],
    room: str,
    at: int,
    folds: int,
    seed: int,
):
    examples = build_training_set(clean(readings))
    if len(examples) < folds:
        raise InsufficientData(f"room {room}: {len(examples)} labeled examples in the history")
    X, y = to_arrays(examples)
    results = evaluate_algorithms(X, y, folds, seed)
    best = select_best(results)
    test = chronological_test_rmse(best, X, y, seed)
    window = (examples[0].features.timestamp, examples[-1].features.timestamp)
    artifact = fit_artifact(
        best,
        X,
        y,
        room=room,
        trained_at=at,
        training_window=window,
        cv_rmse=results[best].cv_rmse,
        test_rmse=test,
        seed=seed,
    )
    return artifact, results


def run_scenario(config: ScenarioConfig, out_dir: str | Path) -> ScenarioResult:
    """Run the experiment and write data/, registry/, logs/ and report/ under ``out_dir``."""
    cfg = config
    run = Path(out_dir)
    paths = {name: run / name for name in ("data", "registry", "logs", "report")}
    for p in paths.values():
        p.mkdir(parents=True, exist_ok=True)
    # a rerun into the same directory starts from scratch
    stale_files = [paths["registry"] / "audit.csv", *(paths["registry"] / "models").glob("v*.mdl")]
    for stale in (*stale_files, *paths["logs"].glob("*.csv")):
        stale.unlink(missing_ok=True)

    t0, end = cfg.start, cfg.end
    clock = SimClock(cfg.history_start)
    broker = Broker(clock=lambda: clock.now / 1000.0)
    registry = ModelRegistry(paths["registry"])
    supervisor = Supervisor(
        registry.audit,
        telemetry_dir=paths["logs"],
        aqi_threshold=cfg.aqi_alert_threshold,
        telemetry_interval_ms=cfg.telemetry_interval,
    )
    policy = RetrainPolicy(
        window_days=cfg.retrain_window_days,
        min_examples=cfg.retrain_min_examples,
        folds=cfg.cv_folds,
        seed=cfg.seeds["training"],
    )
    device_rooms = {s.device_id: s.profile.room for s in cfg.rooms}
    controller = FleetController(registry, broker, clock, policy, cfg.deploy_delay, device_rooms)
    telemetry_sub = broker.subscribe("sensors/+/telemetry")

    devices: list[_Device] = []
    logs: list[PredictionLog] = []
    try:
        clock.advance(t0)
        for index, setup in enumerate(cfg.rooms):
            room = setup.profile.room
            series = generate_room_series(
                setup.profile,
                room_seed(cfg, index),
                cfg.history_start,
                end - cfg.history_start,
                cfg.sampling_interval,
            )
            first_live = next(i for i, r in enumerate(series) if r.timestamp >= t0)
            history = series[:first_live]
            write_readings_csv(paths["data"] / f"{room}_history.csv", history)
            controller.add_history(room, history)

            pred_log = PredictionLog(
                paths["logs"] / f"{setup.device_id}_predictions.csv", version_known=registry.has_version
            )
            logs.append(pred_log)
            agent = EdgeAgent(
                setup.device_id,
                room,
                registry,
                supervisor,
                pred_log,
                broker=broker,
                drift_threshold=cfg.drift_threshold,
            )
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seeds["telemetry"], index]))
            device = _Device(setup, agent, series, first_live, rng)
            device.readings_sub = broker.subscribe(readings_topic(room))
            device.control_sub = broker.subscribe(control_topic(setup.device_id))
            devices.append(device)

            artifact, results = train_initial_model(history, room, t0, cfg.cv_folds, cfg.seeds["training"])
            version = registry.register_model(artifact, t0)
            log.info(
                "%s: initial model v%d %s (cv %s)",
                room,
                version,
                artifact.algorithm.value,
                ", ".join(f"{a.value}={r.cv_rmse:.3f}" for a, r in results.items()),
            )
            if not agent.deploy_version(version, t0):
                raise EdgeFleetError(f"initial deploy of v{version} to {setup.device_id} failed")

        def on_sensor(ev: TimerEvent) -> None:
            d: _Device = ev.payload
            index = d.first_live + (ev.at - t0) // cfg.sampling_interval
            reading = d.series[index]
            broker.publish(readings_topic(d.setup.profile.room), encode_reading(reading))
            d.published += 1
            for message in d.readings_sub.drain():  # type: ignore[union-attr]
                d.agent.process1_step(decode_reading(message.payload), now=ev.at)
            controller.pump()

        def on_telemetry(ev: TimerEvent) -> None:
            d: _Device = ev.payload
            rec = d.telemetry(ev.at)
            broker.publish(telemetry_topic(d.setup.profile.room), encode_payload("telemetry", rec.to_record()))
            for message in telemetry_sub.drain():
                _, fields = decode_payload(message.payload)
                supervisor.ingest_telemetry(TelemetryRecord.from_record(fields))

        def on_daily(ev: TimerEvent) -> None:
            for d in devices:
                reports.append(d.agent.process2_evaluate(ev.at))
            controller.pump()
            supervisor.check_silence(ev.at)

        def on_control(ev: TimerEvent) -> None:
            for d in devices:
                for message in d.control_sub.drain():  # type: ignore[union-attr]
                    d.agent.handle_control(message.payload, ev.at)

        reports: list[DriftReport] = []
        controller.after_publish = on_control
        for d in devices:
            clock.every(t0, cfg.sampling_interval, EventKind.SENSOR, f"sensor:{d.setup.profile.room}", on_sensor, end, d)
        for d in devices:
            clock.every(t0, cfg.telemetry_interval, EventKind.TELEMETRY, f"telemetry:{d.agent.device_id}", on_telemetry, end, d)
        clock.every(t0 + DAY_MS, DAY_MS, EventKind.DAILY_TRIGGER, "daily", on_daily, end + 1)

        wall_start = time.monotonic()
        step = HOUR_MS
        target = end + cfg.deploy_delay
        while clock.now < target:
            nxt = min(clock.now + step, target)
            clock.advance(nxt)
            if cfg.time_acceleration > 0:
                lag = (clock.now - t0) / 1000.0 / cfg.time_acceleration - (time.monotonic() - wall_start)
                if lag > 0:
                    time.sleep(lag)
            if (clock.now - t0) % DAY_MS == 0:
                log.debug("simulated %s", format_instant(clock.now))

        for d in devices:
            live = [r for r in controller.readings[d.setup.profile.room] if r.timestamp >= t0]
            write_readings_csv(paths["data"] / f"{d.setup.profile.room}_live.csv", live)
    finally:
        for pred_log in logs:
            pred_log.close()
        supervisor.close()
        registry.audit.close()
        broker.close()

    published = {d.agent.device_id: d.published for d in devices}
    _check_run(run, cfg, devices, registry)

    audit = registry.audit.records()
    prediction_logs = {
        d.agent.device_id: read_prediction_log(paths["logs"] / f"{d.agent.device_id}_predictions.csv")
        for d in devices
    }
    telemetry = {d.agent.device_id: supervisor.telemetry(d.agent.device_id) for d in devices}
    report = build_fleet_report(
        (t0, target + 1), audit, prediction_logs, telemetry, cfg.sampling_interval, device_rooms
    )
    # uptime is judged against the live window only
    for summary in report.devices.values():
        summary.expected_readings = -(-cfg.duration // cfg.sampling_interval)
    write_report(report, paths["report"], telemetry)

    timelines = {
        s.profile.room: [(r.at, r.model_version) for r in audit if r.event is AuditEvent.DEPLOY and r.room == s.profile.room]
        for s in cfg.rooms
    }
    paths["audit"] = paths["registry"] / "audit.csv"
    paths["drift_events"] = paths["report"] / "drift_events.csv"
    return ScenarioResult(
        run,
        timelines,  # type: ignore[arg-type]
        reports,
        controller.retrains,
        list(supervisor.alarms),
        report,
        paths,
        published,
    )


def _check_run(run: Path, cfg: ScenarioConfig, devices: list[_Device], registry: ModelRegistry) -> None:
    """End-of-run consistency: counters balance and every logged row traces to the audit trail."""
    problems = []
    for d in devices:
        agent = d.agent
        if d.published != agent.inference_count + agent.dropped_readings:
            problems.append(
                f"{agent.device_id}: published {d.published} != processed {agent.inference_count}"
                f" + dropped {agent.dropped_readings}"
            )
        rows = read_prediction_log(run / "logs" / f"{agent.device_id}_predictions.csv")
        if len(rows) != agent.inference_count:
            problems.append(f"{agent.device_id}: {len(rows)} logged rows, {agent.inference_count} inferences")
        bad = sum(1 for row in rows if registry.audit.model_at(agent.room, row.predicted_at) != row.model_version)
        if bad:
            problems.append(f"{agent.device_id}: {bad} rows disagree with the audit trail")
    if problems:
        raise EdgeFleetError("inconsistent run: " + "; ".join(problems))
