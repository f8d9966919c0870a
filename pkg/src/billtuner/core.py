"""Time grids, occupancy schedules, weather series and simulation traces.

These are the shared currency of the whole toolkit: the plant, the
controllers, the comfort evaluation and the billing all operate on the same
fixed-step grid. The default step is 900 s so one grid serves simulation,
control and the 15-minute capacity-tariff peak windows.

Weather CSV format: UTF-8, header ``timestamp,t_out_c,solar_wm2``, ISO-8601
timestamps, LF line endings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .errors import CoverageGap, MissingColumn, ParseError

WEATHER_HEADER = ["timestamp", "t_out_c", "solar_wm2"]
TRACE_HEADER = ["timestamp", "t_in_c", "u", "p_elec_kw", "t_out_c", "solar_wm2", "occupied"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid: ``n_steps`` samples of ``step_seconds`` from ``start``."""

    start: datetime
    step_seconds: int = 900
    n_steps: int = 96

    def __post_init__(self):
        if self.step_seconds <= 0:
            raise ValueError("step_seconds must be positive")
        if self.n_steps <= 0:
            raise ValueError("n_steps must be positive")
        if 3600 % self.step_seconds != 0:
            raise ValueError("step_seconds must divide 3600")

    @property
    def step_hours(self) -> float:
        return self.step_seconds / 3600.0

    @property
    def end(self) -> datetime:
        return self.start + timedelta(seconds=self.step_seconds * self.n_steps)

    def timestamp(self, k: int) -> datetime:
        return self.start + timedelta(seconds=self.step_seconds * k)

    def timestamps(self) -> list[datetime]:
        dt = timedelta(seconds=self.step_seconds)
        return [self.start + k * dt for k in range(self.n_steps)]

    def hours_of_day(self) -> np.ndarray:
        """Fractional hour of day (0..24) for every step."""
        h0 = (
            self.start.hour
            + self.start.minute / 60.0
            + self.start.second / 3600.0
        )
        k = np.arange(self.n_steps)
        return (h0 + k * self.step_seconds / 3600.0) % 24.0

    def epoch_seconds(self) -> np.ndarray:
        e0 = self.start.timestamp()
        return e0 + np.arange(self.n_steps) * float(self.step_seconds)


@dataclass(frozen=True)
class WeatherSeries:
    """Outdoor temperature [degC] and global solar irradiance [W/m2] on a grid."""

    grid: TimeGrid
    t_out: np.ndarray
    solar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t_out", np.asarray(self.t_out, dtype=float))
        object.__setattr__(self, "solar", np.asarray(self.solar, dtype=float))
        if len(self.t_out) != self.grid.n_steps or len(self.solar) != self.grid.n_steps:
            raise ValueError("series length must equal grid.n_steps")
        if np.any(self.solar < 0):
            raise ValueError("solar irradiance must be non-negative")
        if np.any(self.t_out < -40.0) or np.any(self.t_out > 50.0):
            raise ValueError("t_out outside plausible range [-40, 50] degC")


@dataclass(frozen=True)
class OccupancySchedule:
    """Weekday occupancy before/after clock hours; weekends optionally full-time."""

    weekday_occupied_before: float = 7.0
    weekday_occupied_after: float = 20.0
    weekend_occupied: bool = True

    def __post_init__(self):
        if not (0 <= self.weekday_occupied_before <= 24):
            raise ValueError("weekday_occupied_before outside [0, 24]")
        if not (0 <= self.weekday_occupied_after <= 24):
            raise ValueError("weekday_occupied_after outside [0, 24]")
        if self.weekday_occupied_before >= self.weekday_occupied_after:
            raise ValueError("occupied-before hour must precede occupied-after hour")


def occupancy_at(schedule: OccupancySchedule, ts: datetime) -> bool:
    """True when the dwelling is occupied at ``ts``.

    Weekends (ISO Saturday/Sunday) follow the ``weekend_occupied`` flag;
    weekdays are occupied before the morning hour and from the evening hour on.
    """
    hour = ts.hour + ts.minute / 60.0 + ts.second / 3600.0
    if ts.weekday() >= 5:
        return schedule.weekend_occupied
    return hour < schedule.weekday_occupied_before or hour >= schedule.weekday_occupied_after


def occupancy_series(schedule: OccupancySchedule, grid: TimeGrid) -> np.ndarray:
    return np.array([occupancy_at(schedule, ts) for ts in grid.timestamps()], dtype=bool)


@dataclass(frozen=True)
class SimTrace:
    """One closed-loop run: indoor temperature, input, electric power, context."""

    grid: TimeGrid
    t_in: np.ndarray
    u: np.ndarray
    p_elec: np.ndarray
    occupied: np.ndarray
    weather: WeatherSeries

    def __post_init__(self):
        object.__setattr__(self, "t_in", np.asarray(self.t_in, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "p_elec", np.asarray(self.p_elec, dtype=float))
        object.__setattr__(self, "occupied", np.asarray(self.occupied, dtype=bool))
        n = self.grid.n_steps
        for name in ("t_in", "u", "p_elec", "occupied"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length must equal grid.n_steps")
        if np.any(self.u < 0) or np.any(self.u > 1):
            raise ValueError("u outside [0, 1]")
        if np.any(self.p_elec < 0):
            raise ValueError("p_elec must be non-negative")
        if np.any((self.u == 0) != (self.p_elec == 0)):
            raise ValueError("p_elec must be zero exactly when u is zero")


def synth_weather(
    mean_temp: float,
    daily_amp: float,
    noise_std: float,
    solar_peak: float,
    seed: int,
    grid: TimeGrid,
) -> WeatherSeries:
    """Synthetic winter weather: sinusoidal daily cycle plus seeded noise.

    Temperature peaks at 12:00 and bottoms at midnight. Solar is a half-sine
    between 08:00 and 17:00 scaled to ``solar_peak`` and zero at night.
    Deterministic for a fixed seed.
    """
    if daily_amp < 0 or noise_std < 0 or solar_peak < 0:
        raise ValueError("daily_amp, noise_std and solar_peak must be non-negative")
    hours = grid.hours_of_day()
    t_out = mean_temp + daily_amp * np.sin(2 * np.pi * hours / 24.0 - np.pi / 2)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        t_out = t_out + rng.normal(0.0, noise_std, size=grid.n_steps)
    in_window = (hours >= 8.0) & (hours < 17.0)
    phase = np.where(in_window, (hours - 8.0) / 9.0, 0.0)
    solar = np.where(in_window, solar_peak * np.sin(np.pi * phase), 0.0)
    solar = np.maximum(solar, 0.0)
    return WeatherSeries(grid=grid, t_out=t_out, solar=solar)


def load_weather(path, grid: TimeGrid) -> WeatherSeries:
    """Load a weather CSV and align it to ``grid`` by linear interpolation.

    The file must cover the full grid span, otherwise ``CoverageGap`` is
    raised. Rows may be unordered; they are sorted by timestamp.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for required in WEATHER_HEADER:
            if required not in cols:
                raise MissingColumn(f"weather CSV misses column {required!r}")
        times, temps, solars = [], [], []
        for row in reader:
            try:
                ts = datetime.fromisoformat(row["timestamp"])
                times.append(ts.timestamp())
                temps.append(float(row["t_out_c"]))
                solars.append(float(row["solar_wm2"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad weather row {row!r}") from exc
    if len(times) < 2:
        raise ParseError("weather CSV needs at least two rows")
    order = np.argsort(times)
    times = np.asarray(times)[order]
    temps = np.asarray(temps)[order]
    solars = np.asarray(solars)[order]

    grid_epochs = grid.epoch_seconds()
    span_end = grid_epochs[-1]
    if times[0] > grid_epochs[0] + 1e-9 or times[-1] < span_end - 1e-9:
        raise CoverageGap(
            f"file covers [{times[0]}, {times[-1]}] s but grid needs "
            f"[{grid_epochs[0]}, {span_end}] s"
        )
    t_out = np.interp(grid_epochs, times, temps)
    solar = np.interp(grid_epochs, times, solars)
    return WeatherSeries(grid=grid, t_out=t_out, solar=solar)


def write_weather_csv(weather: WeatherSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WEATHER_HEADER)
        for ts, t, s in zip(weather.grid.timestamps(), weather.t_out, weather.solar):
            writer.writerow([ts.isoformat(), repr(float(t)), repr(float(s))])


def write_trace_csv(trace: SimTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for k, ts in enumerate(trace.grid.timestamps()):
            writer.writerow(
                [
                    ts.isoformat(),
                    f"{trace.t_in[k]:.6f}",
                    f"{trace.u[k]:.6f}",
                    f"{trace.p_elec[k]:.6f}",
                    f"{trace.weather.t_out[k]:.6f}",
                    f"{trace.weather.solar[k]:.6f}",
                    int(trace.occupied[k]),
                ]
            )
