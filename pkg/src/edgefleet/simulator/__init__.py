"""Synthetic sensors, the simulated clock and the end-to-end fleet scenario."""

from .clock import EventKind, SimClock, TimerEvent, advance_clock
from .config import (
    DEFAULT_DEVICES,
    RoomSetup,
    ScenarioConfig,
    default_config,
    load_config,
    parse_config,
    render_config,
)
from .generator import CALIBRATION_TARGETS, PROFILES, RegimeShift, RoomProfile, generate_room_series, series_stats
from .scenario import FleetController, RetrainEvent, ScenarioResult, room_seed, run_scenario

__all__ = [
    "CALIBRATION_TARGETS",
    "DEFAULT_DEVICES",
    "EventKind",
    "FleetController",
    "PROFILES",
    "RegimeShift",
    "RetrainEvent",
    "RoomProfile",
    "RoomSetup",
    "ScenarioConfig",
    "ScenarioResult",
    "SimClock",
    "TimerEvent",
    "advance_clock",
    "default_config",
    "generate_room_series",
    "load_config",
    "parse_config",
    "render_config",
    "room_seed",
    "run_scenario",
    "series_stats",
]
