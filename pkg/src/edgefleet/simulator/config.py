"""Scenario configuration and its line-oriented text format.

Top-level ``key = value`` lines come first, then one ``[room <id>]`` section per
room. ``#`` starts a comment. Example::

    start = 2023-04-01T00:00:00Z
    duration_days = 45
    seed.generator = 2023
    seed.training = 7
    seed.telemetry = 11

    [room A10]
    device = jetson-nano-2
    shift = day=20 aqi_offset=30 iaq_accuracy=1

A room section starts from the built-in profile named by ``profile`` (default:
the room id) and may override any scalar profile field, ``coupling.<feature>``
weights, and add ``shift`` lines. Shift tokens: ``day`` (days after start) or
``at`` (instant), ``aqi_offset``, ``iaq_accuracy``, ``coupling.<feature>`` and
``feature.<feature>``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..timefmt import DAY_MS, MINUTE_MS, format_instant, parse_instant
from .generator import FEATURE_MEANS, PROFILES, RegimeShift, RoomProfile

SEED_COMPONENTS = ("generator", "training", "telemetry")

DEFAULT_DEVICES = {"A10": "jetson-nano-2", "A29": "google-tpu-edge", "A30": "raspberry-pi-4"}

_FLOAT_FIELDS = (
    "base_aqi",
    "daily_amplitude",
    "noise_std",
    "occupancy_spike_rate",
    "ar_std",
    "ar_phi",
    "spike_size",
    "peak_hour",
    "corruption_rate",
)
_TEXT_FIELDS = ("room_type", "floor", "sensor_name")


@dataclass(frozen=True)
class RoomSetup:
    profile: RoomProfile
    device_id: str
    seed: int | None = None  # None: derived from the generator seed and room position


@dataclass(frozen=True)
class ScenarioConfig:
    rooms: tuple[RoomSetup, ...]
    start: int
    duration_days: float = 45
    sampling_interval: int = 5 * MINUTE_MS
    telemetry_interval: int = MINUTE_MS
    history_days: float = 90
    drift_threshold: float = 10.0
    aqi_alert_threshold: float = 100.0
    deploy_delay: int = MINUTE_MS
    retrain_window_days: int = 14
    retrain_min_examples: int = 100
    cv_folds: int = 10
    seeds: dict[str, int] = field(default_factory=dict)
    time_acceleration: float = 0.0  # simulated seconds per wall second; 0 runs unpaced

    def __post_init__(self) -> None:
        validate(self)

    @property
    def duration(self) -> int:
        return int(round(self.duration_days * DAY_MS))

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def history_start(self) -> int:
        return self.start - int(round(self.history_days * DAY_MS))


def validate(cfg: ScenarioConfig) -> None:
    if not cfg.rooms:
        raise ConfigError("scenario needs at least one room")
    for name in ("duration_days", "history_days", "drift_threshold", "aqi_alert_threshold"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive")
    for name in ("sampling_interval", "telemetry_interval", "retrain_window_days", "retrain_min_examples"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.deploy_delay < 0:
        raise ConfigError("deploy_delay must not be negative")
    if cfg.deploy_delay >= cfg.sampling_interval:
        raise ConfigError("deploy_delay must be shorter than the sampling interval")
    if cfg.cv_folds < 2:
        raise ConfigError("cv_folds must be at least 2")
    if cfg.time_acceleration < 0:
        raise ConfigError("time_acceleration must not be negative")
    missing = [c for c in SEED_COMPONENTS if c not in cfg.seeds]
    if missing:
        raise ConfigError(f"missing seeds for: {', '.join(missing)}")
    rooms = [r.profile.room for r in cfg.rooms]
    devices = [r.device_id for r in cfg.rooms]
    if len(set(rooms)) != len(rooms):
        raise ConfigError("duplicate room")
    if len(set(devices)) != len(devices):
        raise ConfigError("each room needs its own device")


def default_config(
    start: str = "2023-04-01T00:00:00Z",
    duration_days: float = 45,
    shift_day: float | None = 20,
    shift_offset: float = 30.0,
    seeds: dict[str, int] | None = None,
) -> ScenarioConfig:
    """Three calibrated rooms, optionally each with one recalibration-style shift."""
    t0 = parse_instant(start)
    rooms = []
    for i, (room, device) in enumerate(DEFAULT_DEVICES.items()):
        profile = PROFILES[room]
        if shift_day is not None:
            # stagger the rooms by a day so their retrains do not coincide
            at = t0 + int(round((shift_day + i) * DAY_MS))
            profile = dataclasses.replace(
                profile, regime_shifts=(RegimeShift(at=at, aqi_offset=shift_offset, iaq_accuracy=1.0),)
            )
        rooms.append(RoomSetup(profile, device))
    return ScenarioConfig(
        rooms=tuple(rooms),
        start=t0,
        duration_days=duration_days,
        seeds=dict(seeds or {"generator": 2023, "training": 7, "telemetry": 11}),
    )


# --------------------------------------------------------------------------- text format


def _number(key: str, text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects a number, got {text!r}") from None


def _integer(key: str, text: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects an integer, got {text!r}") from None


def _parse_shift(text: str, start: int, lineno: int) -> RegimeShift:
    at = None
    offset = 0.0
    iaq = None
    couplings: dict[str, float] = {}
    features: dict[str, float] = {}
    for token in text.split():
        key, eq, value = token.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: shift token {token!r} is not key=value")
        if key == "day":
            at = start + int(round(_number(key, value, lineno) * DAY_MS))
        elif key == "at":
            try:
                at = parse_instant(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
        elif key == "aqi_offset":
            offset = _number(key, value, lineno)
        elif key == "iaq_accuracy":
            iaq = _number(key, value, lineno)
        elif key.startswith(("coupling.", "feature.")):
            kind, _, feature = key.partition(".")
            if feature not in FEATURE_MEANS:
                raise ConfigError(f"line {lineno}: unknown feature {feature!r}")
            (couplings if kind == "coupling" else features)[feature] = _number(key, value, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown shift key {key!r}")
    if at is None:
        raise ConfigError(f"line {lineno}: shift needs day= or at=")
    return RegimeShift(at, offset, couplings, features, iaq)


_TOP_KEYS = {
    "start": "instant",
    "duration_days": "float",
    "history_days": "float",
    "sampling_interval_min": "float",
    "telemetry_interval_min": "float",
    "drift_threshold": "float",
    "aqi_alert_threshold": "float",
    "deploy_delay_min": "float",
    "retrain_window_days": "int",
    "retrain_min_examples": "int",
    "cv_folds": "int",
    "time_acceleration": "float",
}


def parse_config(text: str, default_seed: int | None = None) -> ScenarioConfig:
    """Parse the text format. ``default_seed`` fills any ``seed.*`` component left unset."""
    top: dict[str, object] = {}
    seeds: dict[str, int] = {}
    sections: list[tuple[str, int, list[tuple[int, str, str]]]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section header")
            head = line[1:-1].split()
            if len(head) != 2 or head[0] != "room":
                raise ConfigError(f"line {lineno}: expected [room <id>]")
            sections.append((head[1], lineno, []))
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise ConfigError(f"line {lineno}: expected key = value")
        if sections:
            sections[-1][2].append((lineno, key, value))
        elif key.startswith("seed."):
            component = key[len("seed.") :]
            if component not in SEED_COMPONENTS:
                raise ConfigError(f"line {lineno}: unknown seed component {component!r}")
            seeds[component] = _integer(key, value, lineno)
        elif key in _TOP_KEYS:
            if key in top:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            kind = _TOP_KEYS[key]
            if kind == "instant":
                try:
                    top[key] = parse_instant(value)
                except ValueError as exc:
                    raise ConfigError(f"line {lineno}: {exc}") from None
            elif kind == "int":
                top[key] = _integer(key, value, lineno)
            else:
                top[key] = _number(key, value, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    if "start" not in top:
        raise ConfigError("missing required key 'start'")
    start = int(top.pop("start"))  # type: ignore[call-overload]
    kwargs: dict[str, object] = {}
    for key, value in top.items():
        if key.endswith("_min"):
            kwargs[key[: -len("_min")]] = int(round(float(value) * MINUTE_MS))  # type: ignore[arg-type]
        else:
            kwargs[key] = value
    if default_seed is not None:
        for component in SEED_COMPONENTS:
            seeds.setdefault(component, default_seed)
    rooms = tuple(_parse_room(room, lineno, entries, start) for room, lineno, entries in sections)
    try:
        return ScenarioConfig(rooms=rooms, start=start, seeds=seeds, **kwargs)  # type: ignore[arg-type]
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _parse_room(room: str, header_line: int, entries: list[tuple[int, str, str]], start: int) -> RoomSetup:
    values = {key: (lineno, value) for lineno, key, value in entries if key != "shift"}
    if len(values) + sum(1 for _, k, _ in entries if k == "shift") != len(entries):
        raise ConfigError(f"room {room}: duplicate key")
    base_name = values.pop("profile", (header_line, room))[1]
    if base_name in PROFILES:
        base = dataclasses.replace(PROFILES[base_name], room=room)
        if base_name != room:
            base = dataclasses.replace(base, sensor_name=f"sensor-{room.lower()}")
    else:
        needed = ("room_type", "floor", "base_aqi", "daily_amplitude", "noise_std", "occupancy_spike_rate")
        absent = [k for k in needed if k not in values]
        if absent:
            raise ConfigError(f"room {room}: no built-in profile {base_name!r}; missing {', '.join(absent)}")
        base = RoomProfile(room, "", "", 0.0, 0.0, 0.0, 0.0)
    device = values.pop("device", (header_line, DEFAULT_DEVICES.get(room, "")))[1]
    if not device:
        raise ConfigError(f"room {room}: missing device")
    seed = None
    if "seed" in values:
        lineno, text = values.pop("seed")
        seed = _integer("seed", text, lineno)

    changes: dict[str, object] = {}
    couplings = dict(base.feature_couplings)
    for key, (lineno, text) in values.items():
        if key in _FLOAT_FIELDS:
            changes[key] = _number(key, text, lineno)
        elif key in _TEXT_FIELDS:
            changes[key] = text
        elif key.startswith("coupling."):
            feature = key[len("coupling.") :]
            if feature not in FEATURE_MEANS:
                raise ConfigError(f"line {lineno}: unknown feature {feature!r}")
            couplings[feature] = _number(key, text, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown room key {key!r}")
    shifts = tuple(_parse_shift(text, start, lineno) for lineno, key, text in entries if key == "shift")
    try:
        profile = dataclasses.replace(base, feature_couplings=couplings, regime_shifts=shifts, **changes)
    except ValueError as exc:
        raise ConfigError(f"room {room}: {exc}") from None
    return RoomSetup(profile, device, seed)


def load_config(path: str | os.PathLike, default_seed: int | None = None) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {os.fspath(path)!r}: {exc.strerror}") from None
    return parse_config(text, default_seed)


def render_config(cfg: ScenarioConfig) -> str:
    """Text form that ``parse_config`` reads back to an equal config."""
    lines = [
        f"start = {format_instant(cfg.start)}",
        f"duration_days = {cfg.duration_days!r}",
        f"history_days = {cfg.history_days!r}",
        f"sampling_interval_min = {cfg.sampling_interval / MINUTE_MS!r}",
        f"telemetry_interval_min = {cfg.telemetry_interval / MINUTE_MS!r}",
        f"drift_threshold = {cfg.drift_threshold!r}",
        f"aqi_alert_threshold = {cfg.aqi_alert_threshold!r}",
        f"deploy_delay_min = {cfg.deploy_delay / MINUTE_MS!r}",
        f"retrain_window_days = {cfg.retrain_window_days}",
        f"retrain_min_examples = {cfg.retrain_min_examples}",
        f"cv_folds = {cfg.cv_folds}",
        f"time_acceleration = {cfg.time_acceleration!r}",
    ]
    lines += [f"seed.{k} = {v}" for k, v in sorted(cfg.seeds.items())]
    for setup in cfg.rooms:
        p = setup.profile
        lines += ["", f"[room {p.room}]", "profile = none" if p.room not in PROFILES else f"profile = {p.room}"]
        lines.append(f"device = {setup.device_id}")
        if setup.seed is not None:
            lines.append(f"seed = {setup.seed}")
        for name in _TEXT_FIELDS:
            lines.append(f"{name} = {getattr(p, name)}")
        for name in _FLOAT_FIELDS:
            lines.append(f"{name} = {getattr(p, name)!r}")
        for feature, weight in sorted(p.feature_couplings.items()):
            lines.append(f"coupling.{feature} = {weight!r}")
        for s in p.regime_shifts:
            tokens = [f"at={format_instant(s.at)}", f"aqi_offset={s.aqi_offset!r}"]
            if s.iaq_accuracy is not None:
                tokens.append(f"iaq_accuracy={s.iaq_accuracy!r}")
            tokens += [f"coupling.{k}={v!r}" for k, v in sorted(s.coupling_perturbation.items())]
            tokens += [f"feature.{k}={v!r}" for k, v in sorted(s.feature_offsets.items())]
            lines.append("shift = " + " ".join(tokens))
    return "\n".join(lines) + "\n"
