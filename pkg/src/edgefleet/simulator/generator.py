"""Synthetic room sensor streams.

Air quality is built as

    base + amplitude * diurnal + sum(coupling[f] * (f - f_mean)) + AR(1)
         + occupancy build-up + white noise + active regime offsets

and clipped to [0, 500]. The diurnal term peaks at ``peak_hour``. Temperature,
humidity and light follow the same daily cycle, pressure wanders slowly and
``iaq_accuracy_static`` is the sensor's calibration grade (mostly 3).

Most of the slow variation reaches AQI through the coupled features, while the
AR(1) term reverts within the hour. A forecaster therefore leans on the room
features and only partly on the current reading, which is what lets a level
shift in the AQI baseline show up as forecast error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from ..pipeline import AQI_MAX, AQI_MIN, SAMPLING_INTERVAL_MS, SensorReading
from ..timefmt import DAY_MS, HOUR_MS

FEATURE_MEANS = {
    "ambient_light": 120.0,
    "humidity": 38.0,
    "pressure": 1012.0,
    "temperature": 21.5,
}


@dataclass(frozen=True)
class RegimeShift:
    """From ``at`` on: AQI gains ``aqi_offset``, couplings change by
    ``coupling_perturbation`` and room features move by ``feature_offsets``."""

    at: int
    aqi_offset: float
    coupling_perturbation: Mapping[str, float] = field(default_factory=dict)
    feature_offsets: Mapping[str, float] = field(default_factory=dict)
    iaq_accuracy: float | None = None  # sensor calibration grade while the shift is active


@dataclass(frozen=True)
class RoomProfile:
    room: str
    room_type: str
    floor: str
    base_aqi: float
    daily_amplitude: float
    noise_std: float
    occupancy_spike_rate: float  # occupancy events per day
    feature_couplings: Mapping[str, float] = field(default_factory=dict)
    regime_shifts: tuple[RegimeShift, ...] = ()
    ar_std: float = 0.0  # stationary std of the AR(1) component
    ar_phi: float = 0.8  # per-sample persistence of the AR(1) component
    spike_size: float = 0.0  # mean AQI build-up while the room is occupied
    peak_hour: float = 14.0
    sensor_name: str = ""
    corruption_rate: float = 0.0  # fraction of readings with a NaN humidity field

    def __post_init__(self) -> None:
        for name in self.feature_couplings:
            if name not in FEATURE_MEANS:
                raise ValueError(f"cannot couple AQI to {name!r}")
        for shift in self.regime_shifts:
            for name in (*shift.coupling_perturbation, *shift.feature_offsets):
                if name not in FEATURE_MEANS:
                    raise ValueError(f"regime shift touches unknown feature {name!r}")


# Tuned so 90 days land near each room's average AQI and unhealthy (> 100) sample count.
PROFILES: dict[str, RoomProfile] = {
    "A10": RoomProfile(
        room="A10",
        room_type="Office room",
        floor="1",
        base_aqi=59.0,
        daily_amplitude=6.0,
        noise_std=1.5,
        occupancy_spike_rate=2.0,
        feature_couplings={"temperature": 12.5, "humidity": -1.0},
        ar_std=5.0,
        ar_phi=0.8,
        spike_size=15.0,
        peak_hour=14.0,
        sensor_name="sensor-a10",
    ),
    "A29": RoomProfile(
        room="A29",
        room_type="Meeting Room",
        floor="2",
        base_aqi=58.0,
        daily_amplitude=6.0,
        noise_std=1.5,
        occupancy_spike_rate=2.5,
        feature_couplings={"temperature": 13.0, "humidity": -1.2},
        ar_std=5.0,
        ar_phi=0.8,
        spike_size=15.0,
        peak_hour=13.0,
        sensor_name="sensor-a29",
    ),
    "A30": RoomProfile(
        room="A30",
        room_type="Meeting Room",
        floor="2",
        base_aqi=52.9,
        daily_amplitude=7.0,
        noise_std=1.5,
        occupancy_spike_rate=1.5,
        feature_couplings={"temperature": 13.2, "humidity": -1.0},
        ar_std=5.0,
        ar_phi=0.8,
        spike_size=14.0,
        peak_hour=15.0,
        sensor_name="sensor-a30",
    ),
}

# calibration targets per room: (average AQI, samples with AQI > 100 over 90 days)
CALIBRATION_TARGETS = {"A10": (61.92, 2033), "A29": (61.40, 2205), "A30": (55.45, 1085)}


def _ar1(rng: np.random.Generator, n: int, phi: float, std: float) -> np.ndarray:
    """Stationary AR(1) with the given marginal std, started from its stationary law."""
    if std == 0 or n == 0:
        return np.zeros(n)
    innov = rng.normal(0.0, std * np.sqrt(1.0 - phi * phi), size=n)
    innov[0] = rng.normal(0.0, std)
    return lfilter([1.0], [1.0, -phi], innov)


def _occupancy(
    rng: np.random.Generator,
    ts: np.ndarray,
    interval: int,
    events_per_day: float,
    mean_size: float,
    tau: float = 3.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Meetings during working hours. Returns (occupied flag, AQI build-up).

    Each meeting lasts 1 to 3 hours and pushes AQI toward its own level with a
    first-order response of ``tau`` samples; the lights go on with it.
    """
    n = len(ts)
    occupied = np.zeros(n, dtype=bool)
    level = np.zeros(n)
    if events_per_day <= 0 or mean_size <= 0 or n == 0:
        return occupied, level
    per_day = DAY_MS // interval
    for day in range(int(ts[0] // DAY_MS), int(ts[-1] // DAY_MS) + 1):
        day_start = day * DAY_MS
        for _ in range(rng.poisson(events_per_day)):
            begin = day_start + int(rng.uniform(8.0, 17.0) * HOUR_MS)
            length = int(rng.integers(per_day // 24, per_day // 8 + 1)) * interval
            i0, i1 = np.searchsorted(ts, [begin, begin + length])
            occupied[i0:i1] = True
            level[i0:i1] = np.maximum(level[i0:i1], mean_size * rng.uniform(0.8, 1.2))
    return occupied, lfilter([1.0 / tau], [1.0, 1.0 / tau - 1.0], level)


def generate_room_series(
    profile: RoomProfile,
    seed: int,
    start: int,
    duration: int,
    interval: int = SAMPLING_INTERVAL_MS,
) -> list[SensorReading]:
    """Readings at ``start, start + interval, ...`` strictly before ``start + duration``.

    Deterministic in (profile, seed, start, duration, interval).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = -(-duration // interval)
    ts = start + interval * np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)

    hours = (ts % DAY_MS) / HOUR_MS
    diurnal = np.sin(2 * np.pi * (hours - profile.peak_hour + 6.0) / 24.0)
    daytime = np.clip(diurnal, 0.0, None)

    occupied, spikes = _occupancy(rng, ts, interval, profile.occupancy_spike_rate, profile.spike_size)
    features = {
        "temperature": FEATURE_MEANS["temperature"] + 1.5 * diurnal + _ar1(rng, n, 0.995, 0.8),
        "humidity": FEATURE_MEANS["humidity"] - 4.0 * diurnal + _ar1(rng, n, 0.995, 2.0),
        "ambient_light": np.clip(
            FEATURE_MEANS["ambient_light"] - 60.0 + 240.0 * daytime + 250.0 * occupied + rng.normal(0.0, 15.0, n),
            0.0,
            None,
        ),
        "pressure": FEATURE_MEANS["pressure"] + _ar1(rng, n, 0.9995, 5.0),
    }
    iaq_noise = rng.random(n)
    iaq_static = np.where(iaq_noise < 0.03, 2.0, 3.0)
    fast = _ar1(rng, n, profile.ar_phi, profile.ar_std)
    noise = rng.normal(0.0, profile.noise_std, n)

    couplings = {name: np.full(n, profile.feature_couplings.get(name, 0.0)) for name in FEATURE_MEANS}
    offset = np.zeros(n)
    for shift in profile.regime_shifts:
        active = ts >= shift.at
        offset[active] += shift.aqi_offset
        for name, delta in shift.feature_offsets.items():
            features[name] = features[name] + np.where(active, delta, 0.0)
        if shift.iaq_accuracy is not None:
            grade = np.where(iaq_noise < 0.03, shift.iaq_accuracy + 1.0, shift.iaq_accuracy)
            iaq_static = np.where(active, grade, iaq_static)
        for name, delta in shift.coupling_perturbation.items():
            couplings[name] = couplings[name] + np.where(active, delta, 0.0)

    coupled = sum(couplings[name] * (features[name] - FEATURE_MEANS[name]) for name in FEATURE_MEANS)
    aq_static = profile.base_aqi + profile.daily_amplitude * diurnal + coupled + fast + spikes + noise + offset
    aq_static = np.clip(aq_static, AQI_MIN, AQI_MAX)
    # the "altered" channels are the sensor's smoothed outputs; only the static ones feed models
    aq_altered = np.clip(lfilter([0.3], [1.0, -0.7], aq_static - aq_static[0]) + aq_static[0], AQI_MIN, AQI_MAX)
    iaq_altered = np.minimum(iaq_static, 3.0)

    corrupt = rng.random(n) < profile.corruption_rate
    humidity = np.where(corrupt, np.nan, features["humidity"])

    name = profile.sensor_name or f"sensor-{profile.room.lower()}"
    return [
        SensorReading(
            timestamp=int(ts[i]),
            name=name,
            room=profile.room,
            room_type=profile.room_type,
            floor=profile.floor,
            air_quality=float(aq_altered[i]),
            air_quality_static=float(aq_static[i]),
            ambient_light=float(features["ambient_light"][i]),
            humidity=float(humidity[i]),
            iaq_accuracy=float(iaq_altered[i]),
            iaq_accuracy_static=float(iaq_static[i]),
            pressure=float(features["pressure"][i]),
            temperature=float(features["temperature"][i]),
        )
        for i in range(n)
    ]


def series_stats(readings: list[SensorReading], threshold: float = 100.0) -> tuple[float, int]:
    """(mean AQI, count of samples strictly above ``threshold``)."""
    aq = np.array([r.air_quality_static for r in readings])
    return float(aq.mean()), int(np.count_nonzero(aq > threshold))
