from __future__ import annotations

import numpy as np
import pytest
from helpers import STEP, T0, mlr_artifact, series

from edgefleet.agent import DriftReport
from edgefleet.errors import ArtifactVerificationFailed, CorruptArtifact, InsufficientData, UnknownVersion
from edgefleet.models import Algorithm, RFRConfig, TrainingConfig, serialize
from edgefleet.pipeline import build_training_set
from edgefleet.registry import (
    AUDIT_COLUMNS,
    AuditEvent,
    AuditFilter,
    AuditLog,
    EntryStatus,
    ModelRegistry,
    RetrainPolicy,
    audit_query,
    read_audit_csv,
)
from edgefleet.simulator import PROFILES, generate_room_series
from edgefleet.timefmt import DAY_MS


def drift_report(rmse=14.23, version=1, device="google-tpu-edge"):
    return DriftReport(device, T0, (T0 - DAY_MS, T0), rmse, 285, rmse >= 10, version)


def test_versions_are_monotone(tmp_path):
    reg = ModelRegistry(tmp_path)
    assert [reg.register_model(mlr_artifact(), T0) for _ in range(3)] == [1, 2, 3]
    assert sorted(p.name for p in (tmp_path / "models").iterdir()) == ["v1.mdl", "v2.mdl", "v3.mdl"]


def test_identical_bytes_get_a_new_version():
    reg = ModelRegistry()
    data = serialize(mlr_artifact())
    assert reg.register_model(data, T0) == 1
    assert reg.register_model(data, T0) == 2
    assert reg.fetch_artifact(1).params == reg.fetch_artifact(2).params


def test_corrupt_registration_consumes_no_version():
    reg = ModelRegistry()
    data = serialize(mlr_artifact()).replace(b"checksum: ", b"checksum: 0")
    with pytest.raises(ArtifactVerificationFailed):
        reg.register_model(data, T0)
    assert reg.register_model(mlr_artifact(), T0) == 1
    assert len(reg.audit) == 1


def test_fetch_known_and_unknown(tmp_path):
    reg = ModelRegistry(tmp_path)
    for i in range(3):
        reg.register_model(mlr_artifact(intercept=float(i)), T0)
    art = reg.fetch_artifact(2)
    assert art.version == 2 and art.params.intercept == 1.0
    with pytest.raises(UnknownVersion):
        reg.fetch_artifact(99)


def test_fetch_detects_bit_rot(tmp_path):
    reg = ModelRegistry(tmp_path)
    reg.register_model(mlr_artifact(), T0)
    path = tmp_path / "models" / "v1.mdl"
    data = bytearray(path.read_bytes())
    data[-4] = ord("3") if data[-4] != ord("3") else ord("4")
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptArtifact):
        reg.fetch_bytes(1)


def test_model_at_boundaries():
    log = AuditLog()
    log.append(0, AuditEvent.DEPLOY, "R", model_version=1)
    log.append(100, AuditEvent.DEPLOY, "R", model_version=2)
    assert log.model_at("R", -1) is None
    assert log.model_at("R", 50) == 1
    assert log.model_at("R", 100) == 2
    assert log.model_at("other", 100) is None


def test_audit_query_filters():
    log = AuditLog()
    log.append(0, AuditEvent.REGISTER, "A10", model_version=1)
    log.append(5, AuditEvent.DEPLOY, "A10", device_id="d1", model_version=1)
    log.append(7, AuditEvent.DRIFT, "A29", device_id="d2", model_version=2, rmse=3.5)
    assert len(audit_query(log)) == 3
    assert [r.seq for r in log.query(room="A10")] == [1, 2]
    assert [r.seq for r in log.query(device_id="d2")] == [3]
    assert [r.seq for r in log.query(AuditFilter(start=5, end=6))] == [2]
    assert [r.seq for r in log.query(event="drift")] == [3]


def test_audit_csv_round_trip_and_append_only(tmp_path):
    path = tmp_path / "audit.csv"
    log = AuditLog(path)
    log.append(T0, AuditEvent.DRIFT, "A10", device_id="d", model_version=1, rmse=16.39, triggered=True)
    before = path.read_text()
    log.append(T0 + 1, AuditEvent.ALARM, "A10", kind="air_quality", value=101.0)
    log.close()
    after = path.read_text()
    assert after.startswith(before)
    assert after.splitlines()[0] == ",".join(AUDIT_COLUMNS)
    records = read_audit_csv(path)
    assert [r.seq for r in records] == [1, 2]
    assert records[0].get("rmse") == "16.39" and records[0].get("triggered") == "true"
    reopened = AuditLog(path)
    reopened.append(T0 + 2, AuditEvent.DRIFT, "A10")
    reopened.close()
    assert [r.seq for r in read_audit_csv(path)] == [1, 2, 3]


def test_audit_rejects_reserved_characters():
    with pytest.raises(ValueError):
        AuditLog().append(0, AuditEvent.ALARM, "A10", reason="a=b")


def test_registry_reload_restores_state(tmp_path):
    reg = ModelRegistry(tmp_path)
    reg.register_model(mlr_artifact(), T0)
    reg.register_model(mlr_artifact(), T0)
    reg.record_deploy(2, "A10", "d", T0)
    reg.audit.close()
    again = ModelRegistry(tmp_path)
    assert again.versions() == [1, 2]
    assert again.deployed_version("A10") == 2
    assert again.next_version == 3


def test_one_deployed_entry_per_room():
    reg = ModelRegistry()
    for _ in range(2):
        reg.register_model(mlr_artifact(), T0)
    reg.record_deploy(1, "A10", "d", T0)
    reg.record_deploy(2, "A10", "d", T0 + 1)
    assert reg.entry(1).status is EntryStatus.RETIRED
    assert reg.entry(2).status is EntryStatus.DEPLOYED
    with pytest.raises(ArtifactVerificationFailed):
        reg.record_deploy(1, "A29", "d", T0 + 2)


# --------------------------------------------------------------------------- handle_drift

FAST = TrainingConfig(rfr=RFRConfig(n_trees=10))


@pytest.fixture(scope="module")
def recent_examples():
    readings = generate_room_series(PROFILES["A29"], 4, T0 - 14 * DAY_MS, 14 * DAY_MS)
    return build_training_set(readings)


def test_handle_drift_retrains_and_registers(recent_examples):
    reg = ModelRegistry()
    reg.register_model(mlr_artifact(room="A29"), T0 - DAY_MS)
    policy = RetrainPolicy(seed=3, training=FAST)
    decision = reg.handle_drift(drift_report(), recent_examples, "A29", T0, policy)
    assert decision.version == 2 and decision.old_version == 1
    assert set(decision.cv_results) == set(Algorithm)
    best = min(decision.cv_results.values(), key=lambda r: r.cv_rmse)
    assert decision.cv_results[decision.algorithm].cv_rmse == best.cv_rmse
    retrain = reg.audit.query(event="retrain")[0]
    assert retrain.get("drift_rmse") == "14.23" and retrain.get("old_cv_rmse") == "1.0"
    assert retrain.get("algorithm") == decision.algorithm.value
    art = reg.fetch_artifact(2)
    assert art.room == "A29" and art.training_window[1] > art.training_window[0]


def test_handle_drift_is_deterministic(recent_examples):
    out = []
    for _ in range(2):
        reg = ModelRegistry()
        reg.register_model(mlr_artifact(room="A29"), T0)
        d = reg.handle_drift(drift_report(), recent_examples, "A29", T0, RetrainPolicy(seed=3, training=FAST))
        out.append(serialize(reg.fetch_artifact(d.version)))
    assert out[0] == out[1]


def test_handle_drift_needs_recent_data():
    reg = ModelRegistry()
    reg.register_model(mlr_artifact(room="A29"), T0)
    few = build_training_set(series(np.linspace(40, 60, 13), room="A29"))
    assert len(few) == 10
    with pytest.raises(InsufficientData):
        reg.handle_drift(drift_report(), few, "A29", T0)
    assert reg.versions() == [1]
    skipped = reg.audit.query(event="alarm")[0]
    assert skipped.get("kind") == "retrain_skipped" and skipped.get("n_examples") == "10"


def test_handle_drift_requires_a_trigger(recent_examples):
    reg = ModelRegistry()
    with pytest.raises(ValueError):
        reg.handle_drift(drift_report(rmse=5.0), recent_examples, "A29", T0)
