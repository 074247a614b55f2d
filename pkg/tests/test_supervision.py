from __future__ import annotations

import csv

import pytest
from helpers import STEP, T0, make_reading

from edgefleet.errors import UnknownDevice
from edgefleet.pipeline import PredictionRow
from edgefleet.registry import AuditEvent, AuditLog
from edgefleet.supervision import (
    DRIFT_EVENT_COLUMNS,
    AlarmKind,
    Supervisor,
    TelemetryRecord,
    build_fleet_report,
    check_air_quality_alarm,
    ingest_telemetry,
    read_telemetry_csv,
    write_report,
)
from edgefleet.timefmt import DAY_MS, MINUTE_MS


def tel(at, device="dev", inference=0, dropped=0, temp=38.0):
    return TelemetryRecord(
        device, at, (0.0, 0.0, 9.81), (0.0, 0.0, 0.0), 30.0, (22.0, -5.0, 40.0), 1012.0, temp, dropped, inference
    )


def test_air_quality_alarm_is_strict():
    assert check_air_quality_alarm(101.0, "A10", T0) is not None
    assert check_air_quality_alarm(100.0, "A10", T0) is None
    assert check_air_quality_alarm(61.92, "A10", T0) is None


def test_air_quality_alarm_is_audited():
    log = AuditLog()
    alarm = check_air_quality_alarm(150.5, "A10", T0, log, device_id="d", model_version=3)
    assert alarm.kind is AlarmKind.AIR_QUALITY and alarm.value == 150.5 and alarm.threshold == 100.0
    (rec,) = log.records()
    assert rec.event is AuditEvent.ALARM and rec.get("kind") == "air_quality" and rec.model_version == 3


def test_telemetry_at_cadence_raises_nothing(tmp_path):
    sup = Supervisor(AuditLog(), telemetry_dir=tmp_path)
    sup.register_device("dev", "A10")
    for i in range(10):
        assert ingest_telemetry(sup, tel(T0 + i * MINUTE_MS, inference=i))
    assert len(sup.telemetry("dev")) == 10
    assert sup.alarms == []
    sup.close()
    assert read_telemetry_csv(tmp_path / "dev_telemetry.csv") == sup.telemetry("dev")


def test_silence_after_four_intervals():
    sup = Supervisor(AuditLog())
    sup.register_device("dev", "A10")
    sup.ingest_telemetry(tel(T0))
    sup.ingest_telemetry(tel(T0 + 4 * MINUTE_MS))
    assert [a.kind for a in sup.alarms] == [AlarmKind.DEVICE_SILENCE]
    assert sup.alarms[0].value == 4


def test_silence_is_detected_while_still_quiet():
    sup = Supervisor(AuditLog())
    sup.register_device("dev", "A10")
    sup.ingest_telemetry(tel(T0))
    assert sup.check_silence(T0 + 3 * MINUTE_MS) == []
    assert len(sup.check_silence(T0 + 4 * MINUTE_MS)) == 1
    assert sup.check_silence(T0 + 9 * MINUTE_MS) == []  # one alarm per silent spell
    sup.ingest_telemetry(tel(T0 + 10 * MINUTE_MS))
    assert len(sup.alarms) == 1


def test_counter_regression_is_rejected():
    log = AuditLog()
    sup = Supervisor(log)
    sup.register_device("dev", "A10")
    assert sup.ingest_telemetry(tel(T0, inference=5))
    assert not sup.ingest_telemetry(tel(T0 + MINUTE_MS, inference=4))
    assert len(sup.telemetry("dev")) == 1
    assert log.records()[-1].get("kind") == "telemetry_anomaly"


def test_unknown_device():
    sup = Supervisor(AuditLog())
    with pytest.raises(UnknownDevice):
        sup.ingest_telemetry(tel(T0))


def test_telemetry_record_round_trip():
    rec = tel(T0, inference=3, dropped=1, temp=-0.0)
    assert TelemetryRecord.from_record(rec.to_record()) == rec


# --------------------------------------------------------------------------- fleet report


def _audit_with_events():
    log = AuditLog()
    log.append(T0, AuditEvent.DEPLOY, "A10", device_id="dev", model_version=1)
    for day in range(1, 4):
        triggered = day == 2
        log.append(
            T0 + day * DAY_MS, AuditEvent.DRIFT, "A10", device_id="dev", model_version=1 if day < 3 else 2,
            rmse=16.39 if triggered else 5.0, triggered=triggered,
        )
        if triggered:
            log.append(
                T0 + day * DAY_MS, AuditEvent.RETRAIN, "A10", device_id="dev", model_version=2,
                algorithm="RFR", drift_rmse=16.39,
            )
            log.append(T0 + day * DAY_MS + MINUTE_MS, AuditEvent.DEPLOY, "A10", device_id="dev", model_version=2)
    log.append(T0 + 5, AuditEvent.ALARM, "A10", device_id="dev", kind="air_quality")
    return log


def test_report_counts_match_audit():
    log = _audit_with_events()
    report = build_fleet_report((T0, T0 + 4 * DAY_MS), log.records(), {"dev": []})
    dev = report.devices["dev"]
    assert report.drift_count == dev.drift_count == 1
    assert report.retrain_count == 1
    assert dev.alarm_counts == {"air_quality": 1}
    assert dev.model_timeline == [(T0, 1), (T0 + 2 * DAY_MS + MINUTE_MS, 2)]
    (event,) = report.drift_events
    assert (event.deployed_model, event.drift_rmse, event.retrain_rmse) == ("RFR", 16.39, 5.0)


def test_empty_period_has_zero_counts():
    report = build_fleet_report((T0, T0), _audit_with_events().records(), {"dev": []})
    dev = report.devices["dev"]
    assert report.drift_count == report.retrain_count == report.alarm_count == 0
    assert dev.expected_readings == 0 and dev.uptime == 0.0


def test_uptime_counts_logged_rows():
    rows = [PredictionRow(make_reading(T0 + i * STEP), 50.0, 1, T0 + i * STEP) for i in range(12_960)]
    report = build_fleet_report((T0, T0 + 45 * DAY_MS), [], {"dev": rows}, device_rooms={"dev": "A10"})
    dev = report.devices["dev"]
    assert dev.expected_readings == 12_960
    assert dev.uptime == len(rows) / 12_960 == 1.0
    half = build_fleet_report((T0, T0 + 45 * DAY_MS), [], {"dev": rows[::2]}, device_rooms={"dev": "A10"})
    assert half.devices["dev"].uptime == 0.5


def test_telemetry_summary():
    recs = [tel(T0 + i * MINUTE_MS, temp=t) for i, t in enumerate((36.0, 38.0, 40.0))]
    report = build_fleet_report((T0, T0 + DAY_MS), [], {"dev": []}, {"dev": recs}, device_rooms={"dev": "A10"})
    s = report.devices["dev"].telemetry["temperature"]
    assert (s.minimum, s.mean, s.maximum) == (36.0, 38.0, 40.0)
    assert set(report.devices["dev"].telemetry) >= {"accelerometer_z", "magnetometer_x", "pressure"}


def test_report_files(tmp_path):
    log = _audit_with_events()
    recs = [tel(T0 + i * MINUTE_MS) for i in range(3)]
    report = build_fleet_report((T0, T0 + 4 * DAY_MS), log.records(), {"dev": []}, {"dev": recs})
    paths = write_report(report, tmp_path, {"dev": recs}, emit_plot_data=True)
    names = {p.relative_to(tmp_path).as_posix() for p in paths}
    assert {"summary.txt", "drift_events.csv", "device_dev_telemetry.csv"} <= names
    assert "plot_data/daily_rmse_dev.csv" in names
    with open(tmp_path / "drift_events.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == DRIFT_EVENT_COLUMNS
    assert rows[1] == ["1", "2023-04-03", "dev", "RFR", "16.39", "5.00"]
    summary = (tmp_path / "summary.txt").read_text()
    assert "triggered drift events: 1" in summary
    with open(tmp_path / "device_dev_telemetry.csv") as fh:
        assert sum(1 for _ in fh) == 4
