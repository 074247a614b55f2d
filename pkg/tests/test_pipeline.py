from __future__ import annotations

import math

import numpy as np
import pytest
from helpers import STEP, T0, make_reading, series

from edgefleet.errors import InsufficientData, MalformedField, MissingField, UnknownModelVersion
from edgefleet.pipeline import (
    FEATURE_NAMES,
    PREDICTION_COLUMNS,
    READING_COLUMNS,
    PredictionLog,
    PredictionRow,
    append_prediction,
    build_training_set,
    clean,
    label_run_starts,
    parse_reading,
    read_prediction_log,
    read_readings_csv,
    write_readings_csv,
)
from edgefleet.timefmt import MINUTE_MS, format_instant, parse_instant


def raw_record(**overrides):
    rec = make_reading().to_record()
    rec.update(overrides)
    return rec


# --------------------------------------------------------------------------- parse_reading


def test_parse_reading_types_numeric_fields():
    r = parse_reading(raw_record(air_quality_static="61.92", room="A10"))
    assert r.air_quality_static == 61.92
    assert r.room == "A10"
    assert isinstance(r.timestamp, int)


def test_parse_reading_missing_field():
    rec = raw_record()
    del rec["pressure"]
    with pytest.raises(MissingField):
        parse_reading(rec)


def test_parse_reading_malformed_field():
    with pytest.raises(MalformedField):
        parse_reading(raw_record(humidity="damp"))
    with pytest.raises(MalformedField):
        parse_reading(raw_record(timestamp="yesterday"))


def test_reading_record_round_trip():
    rec = raw_record(timestamp="2020-03-15T00:00:00Z", temperature="19.25", ambient_light="0.1")
    reading = parse_reading(rec)
    assert reading.timestamp == parse_instant("2020-03-15T00:00:00Z")
    assert reading.to_record() == rec
    assert list(reading.to_record()) == list(READING_COLUMNS)


def test_feature_vector_order():
    r = make_reading(aq=1, light=2, humidity=3, iaq=4, pressure=5, temperature=6)
    assert FEATURE_NAMES == (
        "air_quality_static",
        "ambient_light",
        "humidity",
        "iaq_accuracy_static",
        "pressure",
        "temperature",
    )
    assert r.features().values == (1, 2, 3, 4, 5, 6)


# --------------------------------------------------------------------------- clean


def test_clean_keeps_first_of_duplicate_timestamps():
    rows = [make_reading(T0, 50), make_reading(T0, 51), make_reading(T0 + STEP, 52)]
    out = clean(rows)
    assert [(r.timestamp, r.air_quality_static) for r in out] == [(T0, 50), (T0 + STEP, 52)]


def test_clean_drops_out_of_range_aqi():
    rows = [make_reading(T0, 612.0), make_reading(T0 + STEP, -1.0), make_reading(T0 + 2 * STEP, 500.0)]
    assert [r.air_quality_static for r in clean(rows)] == [500.0]


def test_clean_sorts_unsorted_input():
    rows = series([1, 2, 3])[::-1]
    assert [r.air_quality_static for r in clean(rows)] == [1, 2, 3]


def test_clean_drops_nan_rows_against_a_scan():
    rng = np.random.default_rng(5)
    rows = series(rng.uniform(20, 90, 1000))
    bad = set(rng.choice(1000, 37, replace=False).tolist())
    rows = [
        make_reading(r.timestamp, r.air_quality_static, humidity=float("nan")) if i in bad else r
        for i, r in enumerate(rows)
    ]
    expected = sum(1 for r in rows if all(math.isfinite(getattr(r, f)) for f in FEATURE_NAMES))
    assert expected == 963
    assert len(clean(rows)) == expected


def test_clean_ignores_unused_raw_channels():
    r = make_reading()
    odd = parse_reading({**r.to_record(), "air_quality": "nan", "iaq_accuracy": "nan"})
    assert clean([odd]) == [odd]


# --------------------------------------------------------------------------- labels


def test_labels_shift_three_rows():
    examples = build_training_set(series([10, 20, 30, 40, 50]))
    assert [e.label for e in examples] == [40, 50]
    assert [e.features.values[0] for e in examples] == [10, 20]


def test_three_readings_are_insufficient():
    with pytest.raises(InsufficientData):
        build_training_set(series([1, 2, 3]))


def test_45_day_series_yields_n_minus_3_examples():
    n = 45 * 288
    rows = series(np.full(n, 55.0))
    starts = [i for i in range(n - 3) if all(rows[i + k + 1].timestamp - rows[i + k].timestamp <= 450_000 for k in range(3))]
    examples = build_training_set(rows)
    assert len(examples) == len(starts) == 12_957


def test_label_run_never_spans_a_gap():
    ts = [T0 + i * STEP for i in range(10)]
    ts[5] += 3 * MINUTE_MS  # an 8-minute gap between positions 4 and 5
    starts = label_run_starts(np.array(ts))
    assert set(starts.tolist()) == {0, 1, 5, 6}


def test_gap_boundary_is_inclusive_at_seven_and_a_half_minutes():
    ts = np.array([0, 450_000, 900_000, 1_350_000])
    assert label_run_starts(ts).tolist() == [0]
    assert label_run_starts(ts + np.array([0, 0, 0, 1])).tolist() == []


# --------------------------------------------------------------------------- prediction log


def _row(i: int, version: int = 1) -> PredictionRow:
    return PredictionRow(make_reading(T0 + i * STEP, 50.0 + i), 60.0 + i, version, T0 + i * STEP)


def test_prediction_log_appends_in_order(tmp_path):
    path = tmp_path / "dev_predictions.csv"
    with PredictionLog(path) as log:
        for i in range(3):
            assert append_prediction(log, _row(i)) == i + 1
    rows = read_prediction_log(path)
    assert rows == [_row(0), _row(1), _row(2)]
    header = path.read_text().splitlines()[0].split(",")
    assert tuple(header) == PREDICTION_COLUMNS
    assert len(PREDICTION_COLUMNS) == 16


def test_prediction_log_rejects_unknown_version(tmp_path):
    path = tmp_path / "p.csv"
    with PredictionLog(path, version_known=lambda v: v == 1) as log:
        log.append(_row(0, 1))
        with pytest.raises(UnknownModelVersion):
            log.append(_row(1, 2))
    assert len(read_prediction_log(path)) == 1


def test_prediction_log_reopen_appends(tmp_path):
    path = tmp_path / "p.csv"
    with PredictionLog(path) as log:
        log.append(_row(0))
    with PredictionLog(path) as log:
        assert len(log) == 1
        log.append(_row(1))
    assert [r.predicted_at for r in read_prediction_log(path)] == [T0, T0 + STEP]


def test_prediction_log_counts_every_append(tmp_path):
    path = tmp_path / "p.csv"
    calls = 0
    with PredictionLog(path) as log:
        for i in range(2000):
            log.append(_row(i))
            calls += 1
    with open(path) as fh:
        assert sum(1 for _ in fh) - 1 == calls


def test_readings_csv_round_trip(tmp_path):
    rows = series([1.5, 2.25, 3.0])
    write_readings_csv(tmp_path / "r.csv", rows)
    assert read_readings_csv(tmp_path / "r.csv") == rows
    assert (tmp_path / "r.csv").read_text().splitlines()[1].startswith(format_instant(T0))


def test_readings_csv_schema_mismatch(tmp_path):
    (tmp_path / "bad.csv").write_text("timestamp,room\n2023-01-01T00:00:00Z,A10\n")
    with pytest.raises(MissingField):
        read_readings_csv(tmp_path / "bad.csv")
