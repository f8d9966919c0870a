"""Reference building plant: a 2R2C thermal network heated by a modulating pump.

The plant is deliberately richer than the linear ARX model the controller
uses (two capacitances, occupancy-driven internal gains), so closed-loop
runs exhibit authentic model mismatch.

    c_air * dT_in/dt  = (t_out - T_in)/r_out + (T_m - T_in)/r_mass
                        + q_heat(u) + solar_gain*solar/1000 + q_int*occupied
    c_mass * dT_m/dt  = (T_in - T_m)/r_mass

Capacitances are in kWh/K and resistances in K/kW, so all fluxes are in kW
and integration uses the step length in hours. The heat pump draws

    P_elec = phi*u + gamma   (u > 0),    0  (u = 0)

where gamma is the startup overhead (fans, circulation pump) that delivers
no useful heat; thermal output is min(cop*phi*u, q_nominal*u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from typing import Callable

import numpy as np

from .core import OccupancySchedule, SimTrace, WeatherSeries, occupancy_series
from .errors import ClosedLoopError, DomainError, NumericalBlowup

STATE_MIN_C = -20.0
STATE_MAX_C = 60.0


@dataclass(frozen=True)
class BuildingParams:
    """2R2C parameters sized so a 15 kW pump comfortably heats at -10 degC."""

    c_air: float = 3.0       # zone air capacitance [kWh/K]
    c_mass: float = 12.0     # envelope/mass capacitance [kWh/K]
    r_out: float = 8.0       # zone-outdoor resistance [K/kW]
    r_mass: float = 2.0      # zone-mass resistance [K/kW]
    solar_gain: float = 2.5  # effective aperture [m2], multiplies irradiance
    q_internal_occupied: float = 0.4  # internal gains when occupied [kW]

    def __post_init__(self):
        for name in ("c_air", "c_mass", "r_out", "r_mass"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.solar_gain < 0:
            raise ValueError("solar_gain must be non-negative")


@dataclass(frozen=True)
class HeatPumpModel:
    q_nominal: float = 15.0  # nominal heating capacity [kW]
    phi: float = 4.0         # electric slope [kW per unit u]
    gamma: float = 1.0       # startup power [kW]
    cop: float = 3.0         # constant coefficient of performance

    def __post_init__(self):
        if self.q_nominal <= 0 or self.phi <= 0 or self.cop <= 0:
            raise ValueError("q_nominal, phi and cop must be strictly positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass(frozen=True)
class PlantState:
    t_in: float
    t_mass: float

    def __post_init__(self):
        if not (math.isfinite(self.t_in) and math.isfinite(self.t_mass)):
            raise ValueError("temperatures must be finite")
        for t in (self.t_in, self.t_mass):
            if t < STATE_MIN_C or t > STATE_MAX_C:
                raise ValueError(f"temperature {t} outside [{STATE_MIN_C}, {STATE_MAX_C}]")


def electric_power(hp: HeatPumpModel, u: float) -> float:
    """Electric draw [kW] for modulation ``u``; discontinuous at u = 0+."""
    if u < 0.0 or u > 1.0:
        raise DomainError(f"modulation {u} outside [0, 1]")
    if u == 0.0:
        return 0.0
    return hp.phi * u + hp.gamma


def heat_output(hp: HeatPumpModel, u: float) -> float:
    """Thermal output [kW]: COP times compressor power, capped at capacity."""
    return min(hp.cop * hp.phi * u, hp.q_nominal * u)


def transition_matrix(params: BuildingParams, dt_seconds: float) -> np.ndarray:
    """Discrete transition matrix of the explicit-Euler step (for stability checks)."""
    dt_h = dt_seconds / 3600.0
    a11 = 1.0 - dt_h / params.c_air * (1.0 / params.r_out + 1.0 / params.r_mass)
    a12 = dt_h / (params.c_air * params.r_mass)
    a21 = dt_h / (params.c_mass * params.r_mass)
    a22 = 1.0 - dt_h / (params.c_mass * params.r_mass)
    return np.array([[a11, a12], [a21, a22]])


def _check_stable(params: BuildingParams, dt_seconds: float) -> None:
    rho = max(abs(np.linalg.eigvals(transition_matrix(params, dt_seconds))))
    if rho >= 1.0:
        raise NumericalBlowup(
            f"Euler step unstable: spectral radius {rho:.4f} >= 1 at dt={dt_seconds}s"
        )


def step(
    params: BuildingParams,
    hp: HeatPumpModel,
    state: PlantState,
    u: float,
    weather_t: tuple[float, float],
    occupied: bool,
    dt: float,
) -> PlantState:
    """One explicit-Euler step of the 2R2C dynamics."""
    if u < 0.0 or u > 1.0:
        raise DomainError(f"modulation {u} outside [0, 1]")
    if dt <= 0:
        raise ValueError("dt must be positive")
    t_out, solar = weather_t
    dt_h = dt / 3600.0
    q_flux = (
        (t_out - state.t_in) / params.r_out
        + (state.t_mass - state.t_in) / params.r_mass
        + heat_output(hp, u)
        + params.solar_gain * solar / 1000.0
        + (params.q_internal_occupied if occupied else 0.0)
    )
    t_in_new = state.t_in + dt_h * q_flux / params.c_air
    t_mass_new = state.t_mass + dt_h * (state.t_in - state.t_mass) / (
        params.r_mass * params.c_mass
    )
    for t in (t_in_new, t_mass_new):
        if not math.isfinite(t) or t < STATE_MIN_C or t > STATE_MAX_C:
            raise NumericalBlowup(
                f"temperature {t:.2f} left [{STATE_MIN_C}, {STATE_MAX_C}] "
                "(check dt and parameters)"
            )
    return PlantState(t_in=t_in_new, t_mass=t_mass_new)


def steady_state(
    params: BuildingParams,
    hp: HeatPumpModel,
    u: float,
    t_out: float,
    solar: float = 0.0,
    occupied: bool = False,
) -> PlantState:
    """Algebraic equilibrium of the continuous dynamics under constant inputs."""
    q_in = (
        heat_output(hp, u)
        + params.solar_gain * solar / 1000.0
        + (params.q_internal_occupied if occupied else 0.0)
    )
    # At equilibrium the mass node carries no flux, so t_mass = t_in and the
    # whole injected heat leaves through r_out.
    t_in = t_out + params.r_out * q_in
    return PlantState(t_in=t_in, t_mass=t_in)


Controller = Callable[[int, datetime, PlantState, "ForecastWindow"], float]


@dataclass(frozen=True)
class ForecastWindow:
    """View of the remaining exogenous signals, starting at the current step."""

    t_out: np.ndarray
    solar: np.ndarray
    occupied: np.ndarray
    start_index: int


def run_closed_loop(
    params: BuildingParams,
    hp: HeatPumpModel,
    controller: Controller,
    weather: WeatherSeries,
    schedule: OccupancySchedule,
    init: PlantState,
) -> SimTrace:
    """Simulate the plant under ``controller`` over the weather grid.

    The controller is called once per step with the step index, timestamp,
    current state and a forward view of weather/occupancy; it returns the
    modulation to apply. Controller and plant errors are re-raised with the
    step index attached.
    """
    grid = weather.grid
    _check_stable(params, grid.step_seconds)
    occupied = occupancy_series(schedule, grid)
    timestamps = grid.timestamps()

    t_in = np.empty(grid.n_steps)
    u_applied = np.empty(grid.n_steps)
    p_elec = np.empty(grid.n_steps)

    state = init
    for k in range(grid.n_steps):
        window = ForecastWindow(
            t_out=weather.t_out[k:],
            solar=weather.solar[k:],
            occupied=occupied[k:],
            start_index=k,
        )
        try:
            u = float(controller(k, timestamps[k], state, window))
        except Exception as exc:
            raise ClosedLoopError(k, f"controller failed: {exc}") from exc
        if not (0.0 <= u <= 1.0) or not math.isfinite(u):
            raise ClosedLoopError(k, f"controller returned u={u} outside [0, 1]")
        t_in[k] = state.t_in
        u_applied[k] = u
        p_elec[k] = electric_power(hp, u)
        try:
            state = step(
                params,
                hp,
                state,
                u,
                (weather.t_out[k], weather.solar[k]),
                bool(occupied[k]),
                grid.step_seconds,
            )
        except NumericalBlowup as exc:
            raise ClosedLoopError(k, str(exc)) from exc

    return SimTrace(
        grid=grid,
        t_in=t_in,
        u=u_applied,
        p_elec=p_elec,
        occupied=occupied,
        weather=weather,
    )
