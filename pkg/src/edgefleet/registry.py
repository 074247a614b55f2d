"""Model repository and audit trail.

On disk a registry is a directory::

    registry/models/v<id>.mdl
    registry/audit.csv      seq,at,event,device_id,room,model_version,detail

``detail`` is a ``key=value;key=value`` list in insertion order. The audit
CSV is append-only and, for identical seeded runs, byte-identical.
"""

from __future__ import annotations

import bisect
import csv
import enum
import io
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    ArtifactVerificationFailed,
    CorruptArtifact,
    FormatVersionMismatch,
    InsufficientData,
    StorageFailure,
    UnknownVersion,
)
from .models import (
    Algorithm,
    CVResult,
    ModelArtifact,
    TrainingConfig,
    chronological_test_rmse,
    deserialize,
    evaluate_algorithms,
    fit_artifact,
    select_best,
    serialize,
)
from .pipeline import LabeledExample, to_arrays
from .timefmt import DAY_MS, format_instant, parse_instant

log = logging.getLogger(__name__)

AUDIT_COLUMNS = ("seq", "at", "event", "device_id", "room", "model_version", "detail")


class AuditEvent(str, enum.Enum):
    REGISTER = "register"
    DEPLOY = "deploy"
    DRIFT = "drift"
    RETRAIN = "retrain"
    ALARM = "alarm"
    DEPLOY_FAILED = "deploy_failed"


class EntryStatus(str, enum.Enum):
    CANDIDATE = "candidate"
    DEPLOYED = "deployed"
    RETIRED = "retired"


def _detail_text(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if any(c in text for c in ";=\n"):
        raise ValueError(f"audit detail value {text!r} contains a reserved character")
    return text


def encode_detail(detail: Iterable[tuple[str, str]]) -> str:
    return ";".join(f"{k}={v}" for k, v in detail)


def decode_detail(text: str) -> tuple[tuple[str, str], ...]:
    if not text:
        return ()
    pairs = []
    for item in text.split(";"):
        key, _, value = item.partition("=")
        pairs.append((key, value))
    return tuple(pairs)


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    at: int
    event: AuditEvent
    device_id: str | None
    room: str
    model_version: int | None
    detail: tuple[tuple[str, str], ...] = ()

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.detail:
            if k == key:
                return v
        return default

    def to_row(self) -> list[str]:
        return [
            str(self.seq),
            format_instant(self.at),
            self.event.value,
            self.device_id or "",
            self.room,
            "" if self.model_version is None else str(self.model_version),
            encode_detail(self.detail),
        ]

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> AuditRecord:
        return cls(
            seq=int(row["seq"]),
            at=parse_instant(row["at"]),
            event=AuditEvent(row["event"]),
            device_id=row["device_id"] or None,
            room=row["room"],
            model_version=int(row["model_version"]) if row["model_version"] else None,
            detail=decode_detail(row["detail"]),
        )


@dataclass(frozen=True)
class AuditFilter:
    room: str | None = None
    device_id: str | None = None
    start: int | None = None
    end: int | None = None  # inclusive
    event: AuditEvent | str | None = None

    def matches(self, r: AuditRecord) -> bool:
        if self.room is not None and r.room != self.room:
            return False
        if self.device_id is not None and r.device_id != self.device_id:
            return False
        if self.start is not None and r.at < self.start:
            return False
        if self.end is not None and r.at > self.end:
            return False
        if self.event is not None and r.event != AuditEvent(self.event):
            return False
        return True


class AuditLog:
    """Append-only, gapless-sequence event log, optionally mirrored to a CSV file."""

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []
        self._timelines: dict[str, tuple[list[tuple[int, int]], list[int]]] = {}
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists() and self.path.stat().st_size > 0:
                self._records = read_audit_csv(self.path)
                self._fh = open(self.path, "a", newline="", encoding="utf-8")
            else:
                self._fh = open(self.path, "w", newline="", encoding="utf-8")
                self._write(AUDIT_COLUMNS)
            for r in self._records:
                self._index(r)

    def _write(self, values: Sequence[str]) -> None:
        assert self._fh is not None
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(values)
        try:
            self._fh.write(buf.getvalue())
            self._fh.flush()
        except OSError as exc:
            raise StorageFailure(f"audit append failed: {exc}") from exc

    def _index(self, r: AuditRecord) -> None:
        if r.event is AuditEvent.DEPLOY and r.model_version is not None:
            keys, versions = self._timelines.setdefault(r.room, ([], []))
            key = (r.at, r.seq)
            i = bisect.bisect_right(keys, key)
            keys.insert(i, key)
            versions.insert(i, r.model_version)

    def append(
        self,
        at: int,
        event: AuditEvent | str,
        room: str,
        *,
        device_id: str | None = None,
        model_version: int | None = None,
        **detail: object,
    ) -> AuditRecord:
        pairs = tuple((k, _detail_text(v)) for k, v in detail.items())
        with self._lock:
            record = AuditRecord(
                seq=len(self._records) + 1,
                at=at,
                event=AuditEvent(event),
                device_id=device_id,
                room=room,
                model_version=model_version,
                detail=pairs,
            )
            if self._fh is not None:
                self._write(record.to_row())
            self._records.append(record)
            self._index(record)
        return record

    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def query(self, filt: AuditFilter | None = None, **kwargs: object) -> list[AuditRecord]:
        filt = filt or AuditFilter(**kwargs)  # type: ignore[arg-type]
        return [r for r in self.records() if filt.matches(r)]

    def model_at(self, room: str, at: int) -> int | None:
        """Version live in ``room`` at ``at``: the latest deploy with deploy.at <= at."""
        with self._lock:
            keys, versions = self._timelines.get(room, ([], []))
            i = bisect.bisect_right(keys, (at, float("inf")))
            return versions[i - 1] if i else None

    def close(self) -> None:
        if self._fh is not None and not self._fh.closed:
            self._fh.close()


def read_audit_csv(path: str | os.PathLike) -> list[AuditRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [AuditRecord.from_row(row) for row in csv.DictReader(fh)]


def audit_query(log: AuditLog, filt: AuditFilter | None = None, **kwargs: object) -> list[AuditRecord]:
    return log.query(filt, **kwargs)


# --------------------------------------------------------------------------- registry


@dataclass
class RegistryEntry:
    artifact: ModelArtifact
    registered_at: int
    status: EntryStatus = EntryStatus.CANDIDATE


@dataclass(frozen=True)
class RetrainPolicy:
    window_days: int = 14
    min_examples: int = 100
    folds: int = 10
    seed: int = 0
    training: TrainingConfig = field(default_factory=TrainingConfig)


@dataclass(frozen=True)
class DeploymentDecision:
    version: int
    algorithm: Algorithm
    room: str
    device_id: str | None
    old_version: int | None
    cv_results: dict[Algorithm, CVResult]
    test_rmse: float


class ModelRegistry:
    """Versioned artifact store plus the audit trail it writes to.

    Registration and deployment bookkeeping go through one lock so version ids
    and audit sequence numbers stay monotone; reads never block on training.
    """

    def __init__(self, root: str | os.PathLike | None = None, audit: AuditLog | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self._lock = threading.RLock()
        self._entries: dict[int, RegistryEntry] = {}
        self._blobs: dict[int, bytes] = {}
        self._deployed: dict[str, int] = {}
        if self.root is not None:
            (self.root / "models").mkdir(parents=True, exist_ok=True)
        self.audit = audit or AuditLog(self.root / "audit.csv" if self.root is not None else None)
        if self.root is not None:
            self._reload()

    def _reload(self) -> None:
        assert self.root is not None
        registered = {
            r.model_version: r.at
            for r in self.audit.records()
            if r.event is AuditEvent.REGISTER and r.model_version is not None
        }
        for path in sorted((self.root / "models").glob("v*.mdl"), key=lambda p: int(p.stem[1:])):
            version = int(path.stem[1:])
            data = path.read_bytes()
            try:
                artifact = deserialize(data)
            except (CorruptArtifact, FormatVersionMismatch):
                log.warning("registry file %s fails verification; fetches will raise", path)
                artifact = None
            if artifact is not None:
                self._entries[version] = RegistryEntry(artifact, registered.get(version, 0))
        for r in self.audit.records():
            if r.event is AuditEvent.DEPLOY and r.model_version in self._entries:
                self._set_deployed(r.room, r.model_version)

    def _model_path(self, version: int) -> Path:
        assert self.root is not None
        return self.root / "models" / f"v{version}.mdl"

    @property
    def next_version(self) -> int:
        with self._lock:
            return max(self._entries, default=0) + 1

    def has_version(self, version: int) -> bool:
        return version in self._entries

    def entry(self, version: int) -> RegistryEntry:
        try:
            return self._entries[version]
        except KeyError:
            raise UnknownVersion(f"no model version {version}") from None

    def versions(self) -> list[int]:
        return sorted(self._entries)

    def register_model(self, artifact: ModelArtifact | bytes, at: int) -> int:
        """Store an immutable snapshot under the next version id."""
        try:
            if isinstance(artifact, (bytes, bytearray)):
                artifact = deserialize(bytes(artifact))
            else:
                deserialize(serialize(artifact))
        except (CorruptArtifact, FormatVersionMismatch) as exc:
            raise ArtifactVerificationFailed(f"refusing to register: {exc}") from exc
        with self._lock:
            version = self.next_version
            stored = artifact.with_version(version)
            data = serialize(stored)
            if self.root is not None:
                path = self._model_path(version)
                tmp = path.with_suffix(".tmp")
                try:
                    tmp.write_bytes(data)
                    tmp.replace(path)
                except OSError as exc:
                    raise StorageFailure(f"cannot write {path}: {exc}") from exc
            else:
                self._blobs[version] = data
            self._entries[version] = RegistryEntry(stored, at)
            self.audit.append(
                at,
                AuditEvent.REGISTER,
                stored.room,
                model_version=version,
                algorithm=stored.algorithm.value,
                cv_rmse=stored.cv_rmse,
                test_rmse=stored.test_rmse,
            )
            return version

    def fetch_bytes(self, version: int) -> bytes:
        """Stored bytes for ``version`` after re-verifying their checksum."""
        if self.root is not None:
            path = self._model_path(version)
            if not path.exists():
                raise UnknownVersion(f"no model version {version}")
            data = path.read_bytes()
        else:
            if version not in self._blobs:
                raise UnknownVersion(f"no model version {version}")
            data = self._blobs[version]
        try:
            deserialize(data)
        except FormatVersionMismatch:
            raise
        except CorruptArtifact as exc:
            raise CorruptArtifact(f"model version {version}: {exc}") from exc
        return data

    def fetch_artifact(self, version: int) -> ModelArtifact:
        return deserialize(self.fetch_bytes(version))

    def deployed_version(self, room: str) -> int | None:
        return self._deployed.get(room)

    def _set_deployed(self, room: str, version: int) -> int | None:
        old = self._deployed.get(room)
        if old is not None and old != version and old in self._entries:
            self._entries[old].status = EntryStatus.RETIRED
        self._entries[version].status = EntryStatus.DEPLOYED
        self._deployed[room] = version
        return old

    def record_deploy(self, version: int, room: str, device_id: str | None, at: int) -> AuditRecord:
        with self._lock:
            entry = self.entry(version)
            if entry.artifact.room != room:
                raise ArtifactVerificationFailed(
                    f"model v{version} was trained for room {entry.artifact.room}, not {room}"
                )
            old = self._set_deployed(room, version)
            return self.audit.append(
                at,
                AuditEvent.DEPLOY,
                room,
                device_id=device_id,
                model_version=version,
                old_version="" if old is None else old,
                algorithm=entry.artifact.algorithm.value,
            )

    def record_failed_deploy(
        self, version: int, room: str, device_id: str | None, at: int, reason: str
    ) -> AuditRecord:
        return self.audit.append(
            at,
            AuditEvent.DEPLOY_FAILED,
            room,
            device_id=device_id,
            model_version=version,
            kept_version="" if self._deployed.get(room) is None else self._deployed[room],
            reason=reason.replace(";", ",").replace("=", ":").replace("\n", " "),
        )

    def handle_drift(
        self,
        report,  # DriftReport; typed loosely to keep the agent module out of this import graph
        recent_data: Sequence[LabeledExample],
        room: str,
        at: int,
        policy: RetrainPolicy = RetrainPolicy(),
    ) -> DeploymentDecision:
        """Retrain on the recent window, pick the best of four by CV and register it.

        Deployment itself is the caller's move (a control message to the device).
        """
        if not report.triggered:
            raise ValueError("handle_drift called for a report that did not trigger")
        old_version = report.model_version
        if len(recent_data) < policy.min_examples:
            self.audit.append(
                at,
                AuditEvent.ALARM,
                room,
                device_id=report.device_id,
                model_version=old_version,
                kind="retrain_skipped",
                reason="insufficient_data",
                n_examples=len(recent_data),
                minimum=policy.min_examples,
            )
            raise InsufficientData(
                f"{len(recent_data)} labeled examples in the retrain window, need {policy.min_examples}"
            )
        X, y = to_arrays(recent_data)
        results = evaluate_algorithms(X, y, policy.folds, policy.seed, policy.training)
        best = select_best(results)
        test = chronological_test_rmse(best, X, y, policy.seed, policy.training)
        window = (recent_data[0].features.timestamp, recent_data[-1].features.timestamp)
        artifact = fit_artifact(
            best,
            X,
            y,
            room=room,
            trained_at=at,
            training_window=window,
            cv_rmse=results[best].cv_rmse,
            test_rmse=test,
            seed=policy.seed,
            config=policy.training,
        )
        version = self.register_model(artifact, at)
        old_cv = self._entries[old_version].artifact.cv_rmse if old_version in self._entries else None
        self.audit.append(
            at,
            AuditEvent.RETRAIN,
            room,
            device_id=report.device_id,
            model_version=version,
            old_version="" if old_version is None else old_version,
            algorithm=best.value,
            drift_rmse=float(report.daily_rmse),
            old_cv_rmse="" if old_cv is None else old_cv,
            new_cv_rmse=results[best].cv_rmse,
            test_rmse=test,
            n_examples=len(recent_data),
            **{f"cv_{a.value.lower()}": r.cv_rmse for a, r in results.items()},
        )
        return DeploymentDecision(version, best, room, report.device_id, old_version, results, test)


def retrain_window_start(at: int, policy: RetrainPolicy) -> int:
    return at - policy.window_days * DAY_MS
