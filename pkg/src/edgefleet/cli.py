"""Command-line entry point: ``edgefleet <command> ...``.

Exit codes: 0 success, 2 input error, 3 insufficient data, 4 internal failure.
Failures print one line to stderr::

    edgefleet: error code=<n> kind=<ExceptionName> message=<text>
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ArtifactVerificationFailed,
    ConfigError,
    CorruptArtifact,
    EdgeFleetError,
    FormatVersionMismatch,
    InsufficientData,
    MalformedField,
    MissingField,
)
from .models import (
    ARTIFACT_SUFFIX,
    Algorithm,
    ELMParams,
    MLRParams,
    RFRParams,
    SVRParams,
    chronological_test_rmse,
    cross_validate,
    deserialize,
    fit_artifact,
    select_best,
    serialize,
)
from .pipeline import (
    FEATURE_NAMES,
    SAMPLING_INTERVAL_MS,
    build_training_set,
    clean,
    read_prediction_log,
    read_readings_csv,
    to_arrays,
)
from .registry import AUDIT_COLUMNS, AuditEvent, AuditFilter, read_audit_csv
from .supervision import build_fleet_report, read_telemetry_csv, render_summary, write_report
from .timefmt import DAY_MS, format_instant, parse_instant

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

SEED_ENV = "EDGEFLEET_SEED"
TRAIN_COLUMNS = ("room", "algorithm", "cv_rmse", "test_rmse", "selected")


class UsageError(Exception):
    """Bad command line; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _default_seed() -> int:
    text = os.environ.get(SEED_ENV, "").strip()
    if not text:
        return 0
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {text!r}") from None


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v: float) -> str:
    return f"{v:.6g}"


# --------------------------------------------------------------------------- train


def cmd_train(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    readings = [r for r in read_readings_csv(args.data) if r.room == args.room]
    if not readings:
        raise InsufficientData(f"no readings for room {args.room!r} in {args.data}")
    examples = build_training_set(clean(readings))
    if len(examples) < args.folds:
        raise InsufficientData(f"{len(examples)} labeled examples cannot fill {args.folds} folds")
    X, y = to_arrays(examples)

    algorithms = list(Algorithm) if args.algo == "best" else [Algorithm.parse(args.algo)]
    results = {a: cross_validate(a, X, y, args.folds, seed) for a in algorithms}
    chosen = select_best(results)
    tests = {a: chronological_test_rmse(a, X, y, seed) for a in algorithms}

    window = (examples[0].features.timestamp, examples[-1].features.timestamp)
    if window[0] == window[1]:
        window = (window[0], window[0] + SAMPLING_INTERVAL_MS)
    artifact = fit_artifact(
        chosen,
        X,
        y,
        room=args.room,
        trained_at=max(r.timestamp for r in readings),
        training_window=window,
        cv_rmse=results[chosen].cv_rmse,
        test_rmse=tests[chosen],
        seed=seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.room}_{chosen.value.lower()}{ARTIFACT_SUFFIX}"
    path.write_bytes(serialize(artifact))

    rows = [
        (args.room, a.value, _fmt(results[a].cv_rmse), _fmt(tests[a]), "*" if a is chosen else "")
        for a in algorithms
    ]
    sys.stdout.write(_csv_text(TRAIN_COLUMNS, rows))
    logging.getLogger(__name__).info("wrote %s", path)
    return EXIT_OK


# --------------------------------------------------------------------------- simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    from .simulator import load_config, run_scenario

    config = load_config(args.config, default_seed=_default_seed() if os.environ.get(SEED_ENV) else None)
    result = run_scenario(config, args.out)
    report = result.report
    print(f"run: {result.run_dir}")
    print(f"triggered drift events: {report.drift_count}")
    print(f"retrain events: {report.retrain_count}")
    print(f"alarms: {report.alarm_count}")
    print(f"audit: {result.paths['audit']}")
    print(f"drift events: {result.paths['drift_events']}")
    return EXIT_OK


# --------------------------------------------------------------------------- report


def _run_dir(path: str) -> Path:
    run = Path(path)
    if not (run / "registry" / "audit.csv").is_file():
        raise UsageError(f"{path} is not a run directory (no registry/audit.csv)")
    return run


def parse_period(text: str) -> tuple[int, int]:
    """``a..b`` with RFC 3339 instants or dates; a date end covers that whole day."""
    start, sep, end = text.partition("..")
    if not sep or not start.strip() or not end.strip():
        raise UsageError(f"period must look like <start>..<end>, got {text!r}")
    a = parse_instant(start)
    b = parse_instant(end)
    if "T" not in end.upper():
        b += DAY_MS
    if b <= a:
        raise UsageError(f"period {text!r} ends before it starts")
    return a, b


def cmd_report(args: argparse.Namespace) -> int:
    run = _run_dir(args.run)
    audit = read_audit_csv(run / "registry" / "audit.csv")
    logs = {
        p.name[: -len("_predictions.csv")]: read_prediction_log(p)
        for p in sorted((run / "logs").glob("*_predictions.csv"))
    }
    telemetry = {
        p.name[: -len("_telemetry.csv")]: read_telemetry_csv(p)
        for p in sorted((run / "logs").glob("*_telemetry.csv"))
    }
    stamps = [row.predicted_at for rows in logs.values() for row in rows]
    if args.period:
        period = parse_period(args.period)
        expected = None
    else:
        if not stamps:
            raise InsufficientData(f"{run} has no logged predictions")
        first = min(stamps) // DAY_MS * DAY_MS
        live_end = -(-(max(stamps) + 1) // DAY_MS) * DAY_MS
        period = (first, max([live_end, *(r.at for r in audit)]) + 1)
        expected = -(-(live_end - first) // SAMPLING_INTERVAL_MS)
    report = build_fleet_report(period, audit, logs, telemetry)
    if expected is not None:
        for summary in report.devices.values():
            summary.expected_readings = expected
    write_report(report, run / "report", telemetry, emit_plot_data=args.emit_plot_data)
    sys.stdout.write(render_summary(report))
    return EXIT_OK


# --------------------------------------------------------------------------- audit


def cmd_audit(args: argparse.Namespace) -> int:
    run = _run_dir(args.run)
    records = read_audit_csv(run / "registry" / "audit.csv")
    if args.at is not None:
        at = parse_instant(args.at)
        rooms = sorted({r.room for r in records if r.event is AuditEvent.DEPLOY and r.room})
        if args.room is not None:
            rooms = [r for r in rooms if r == args.room]
        rows = []
        for room in rooms:
            deploys = [r for r in records if r.event is AuditEvent.DEPLOY and r.room == room and r.at <= at]
            live = max(deploys, key=lambda r: (r.at, r.seq)).model_version if deploys else None
            rows.append((room, format_instant(at), "" if live is None else live))
        sys.stdout.write(_csv_text(("room", "at", "model_version"), rows))
        return EXIT_OK
    if args.event is not None:
        try:
            AuditEvent(args.event)
        except ValueError:
            choices = ", ".join(e.value for e in AuditEvent)
            raise UsageError(f"unknown event {args.event!r}; expected one of {choices}") from None
    filt = AuditFilter(room=args.room, device_id=args.device, event=args.event)
    rows = [r.to_row() for r in records if filt.matches(r)]
    sys.stdout.write(_csv_text(AUDIT_COLUMNS, rows))
    return EXIT_OK


# --------------------------------------------------------------------------- inspect-model


def _vector(values: Sequence[float]) -> str:
    return " ".join(_fmt(float(v)) for v in values)


def cmd_inspect_model(args: argparse.Namespace) -> int:
    path = Path(args.file)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc.strerror}") from None
    a = deserialize(data)
    lines = [
        f"file: {path}",
        f"version: {a.version}",
        f"algorithm: {a.algorithm.value}",
        f"room: {a.room}",
        f"trained_at: {format_instant(a.trained_at)}",
        f"training_window: {format_instant(a.training_window[0])}..{format_instant(a.training_window[1])}",
        f"cv_rmse: {_fmt(a.cv_rmse)}",
        f"test_rmse: {_fmt(a.test_rmse)}",
        f"features: {' '.join(FEATURE_NAMES)}",
        f"scaler.means: {_vector(a.scaler.means)}",
        f"scaler.std_devs: {_vector(a.scaler.std_devs)}",
    ]
    p = a.params
    if isinstance(p, (MLRParams, SVRParams)):
        lines.append(f"weights: {_vector(p.weights)}")
        lines.append(f"intercept: {_fmt(p.intercept)}")
    if isinstance(p, SVRParams):
        lines.append(f"svr: epsilon={_fmt(p.epsilon)} C={_fmt(p.C)} epochs={p.epochs} lr={_fmt(p.learning_rate)}")
    elif isinstance(p, ELMParams):
        lines.append(f"elm: hidden={p.hidden_size} activation={p.activation} seed={p.seed}")
        lines.append(f"output_bias: {_fmt(p.output_bias)}")
    elif isinstance(p, RFRParams):
        nodes = [t.n_nodes for t in p.trees]
        lines.append(
            f"rfr: trees={p.n_trees} max_depth={p.max_depth} min_leaf={p.min_leaf}"
            f" max_features={p.max_features} seed={p.seed}"
        )
        lines.append(f"nodes: min={min(nodes)} mean={np.mean(nodes):.1f} max={max(nodes)}")
    print("\n".join(lines))
    return EXIT_OK


# --------------------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgefleet", description="Edge fleet model training, simulation and audit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train models offline from a readings CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--room", required=True)
    p.add_argument("--algo", required=True, choices=("mlr", "svr", "elm", "rfr", "best"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run a scenario from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="rebuild the fleet report of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--period")
    p.add_argument("--emit-plot-data", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("audit", help="query a run's audit trail")
    p.add_argument("--run", required=True)
    p.add_argument("--room")
    p.add_argument("--device")
    p.add_argument("--at")
    p.add_argument("--event")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("inspect-model", help="print a model artifact's metadata")
    p.add_argument("--file", required=True)
    p.set_defaults(func=cmd_inspect_model)
    return parser


_INPUT_ERRORS = (
    UsageError,
    ConfigError,
    MalformedField,
    MissingField,
    CorruptArtifact,
    FormatVersionMismatch,
    ArtifactVerificationFailed,
    FileNotFoundError,
    IsADirectoryError,
    ValueError,
)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, InsufficientData):
        return EXIT_DATA
    if isinstance(exc, _INPUT_ERRORS):
        return EXIT_INPUT
    return EXIT_INTERNAL


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one line and an exit code
        code = _exit_code(exc)
        kind = "UsageError" if isinstance(exc, UsageError) else type(exc).__name__
        message = " ".join(str(exc).split()) or kind
        print(f"edgefleet: error code={code} kind={kind} message={message}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
