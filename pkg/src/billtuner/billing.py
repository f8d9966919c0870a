"""Electricity bills for the Belgian Vlaanderen contract menu.

A monthly bill has three parts: energy (time-of-use kWh times the tariff),
a capacity charge on the highest 15-minute mean power of the month, and a
fixed monthly charge. Day tariff applies Monday-Friday 07:00-22:00; nights
and weekends are Night.

Twelve contracts ship built in, in four families (dynamic/static, with and
without capacity tariff, day-night or single rate). Dynamic contracts price
each month differently: November carries the published rates and the other
heating months apply a fixed synthetic offset schedule (the real month-by-
month dynamic prices are not public), overridable from the contract TOML.

Money is handled internally in integer milli-euros (tenths of a cent) so
totals are exactly reproducible; kWh sums use ``math.fsum`` so bills are
invariant under reordering of equal-price steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .core import SimTrace, TimeGrid
from .errors import (
    DuplicateCode,
    GridMismatch,
    MissingMonthPrice,
    SchemaError,
    SpanMismatch,
)

DAY_START_HOUR = 7
DAY_END_HOUR = 22
PEAK_WINDOW_S = 900

# synthetic month offsets [EUR/kWh] added to dynamic-contract energy prices;
# November is the published anchor month
DYNAMIC_MONTH_OFFSETS = {"nov": 0.0, "dec": 0.018, "jan": 0.027, "feb": 0.012}

MONTH_KEYS = ("nov", "dec", "jan", "feb")


@dataclass(frozen=True)
class Contract:
    """One tariff: either a single energy price or a day/night pair."""

    code: str
    single_price: float | None = None
    day_price: float | None = None
    night_price: float | None = None
    capacity_tariff: float = 0.0
    fixed_charge: float = 0.0
    dynamic: bool = False
    per_month_prices: dict = field(default_factory=dict)
    # per_month_prices: month key -> {"single": x} or {"day": x, "night": y}

    def __post_init__(self):
        has_single = self.single_price is not None
        has_dn = self.day_price is not None or self.night_price is not None
        if has_single and has_dn:
            raise SchemaError(f"{self.code}: both single and day/night prices given")
        if not has_single and (self.day_price is None or self.night_price is None):
            raise SchemaError(f"{self.code}: needs single_price or day+night prices")
        for name in ("single_price", "day_price", "night_price"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise SchemaError(f"{self.code}: {name} must be non-negative")
        if self.capacity_tariff < 0 or self.fixed_charge < 0:
            raise SchemaError(f"{self.code}: charges must be non-negative")

    @property
    def is_single(self) -> bool:
        return self.single_price is not None

    def month_prices(self, month: str) -> tuple[float | None, float | None, float | None]:
        """(single, day, night) effective for ``month``."""
        if not self.dynamic:
            return self.single_price, self.day_price, self.night_price
        override = self.per_month_prices.get(month)
        if override is not None:
            if self.is_single:
                if "single" not in override:
                    raise MissingMonthPrice(f"{self.code}: no single price for {month}")
                return float(override["single"]), None, None
            if "day" not in override or "night" not in override:
                raise MissingMonthPrice(f"{self.code}: incomplete day/night for {month}")
            return None, float(override["day"]), float(override["night"])
        if month not in DYNAMIC_MONTH_OFFSETS:
            raise MissingMonthPrice(f"{self.code}: no price defined for month {month!r}")
        off = DYNAMIC_MONTH_OFFSETS[month]
        if self.is_single:
            return self.single_price + off, None, None
        return None, self.day_price + off, self.night_price + off


@dataclass(frozen=True)
class BillBreakdown:
    """Bill components in integer milli-euros; euro views are derived."""

    energy_milli: int
    capacity_milli: int
    fixed_milli: int
    peak_kw: float
    day_kwh: float
    night_kwh: float

    @property
    def total_milli(self) -> int:
        return self.energy_milli + self.capacity_milli + self.fixed_milli

    @property
    def energy_cost(self) -> float:
        return self.energy_milli / 1000.0

    @property
    def capacity_cost(self) -> float:
        return self.capacity_milli / 1000.0

    @property
    def fixed_cost(self) -> float:
        return self.fixed_milli / 1000.0

    @property
    def total(self) -> float:
        return self.total_milli / 1000.0


def _to_milli(eur: float) -> int:
    return int(round(eur * 1000.0))


def classify_period(ts: datetime) -> str:
    """'Day' on weekdays 07:00-22:00 (end exclusive), else 'Night'."""
    if ts.weekday() >= 5:
        return "Night"
    return "Day" if DAY_START_HOUR <= ts.hour < DAY_END_HOUR else "Night"


def peak_power_15min(p_elec: np.ndarray, grid: TimeGrid) -> float:
    """Highest mean power over calendar-aligned, non-overlapping 15-min windows."""
    if PEAK_WINDOW_S % grid.step_seconds != 0:
        raise GridMismatch(f"step {grid.step_seconds}s does not divide 900s")
    p_elec = np.asarray(p_elec, dtype=float)
    if len(p_elec) != grid.n_steps:
        raise ValueError("power series length must equal grid.n_steps")
    windows = (grid.epoch_seconds() // PEAK_WINDOW_S).astype(np.int64)
    change = np.flatnonzero(np.diff(windows)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(p_elec)]])
    sums = np.add.reduceat(p_elec, starts)
    return float(np.max(sums / (ends - starts)))


def compute_bill(trace: SimTrace, contract: Contract, month: str) -> BillBreakdown:
    """Bill for ``trace`` under ``contract`` in calendar ``month``.

    All trace timestamps must fall inside the month. Capacity and fixed
    charges are monthly figures; when the trace covers only part of the
    month they are prorated by covered days so partial-month (desk-scale)
    runs stay comparable across contract structures.
    """
    grid = trace.grid
    timestamps = grid.timestamps()
    first, last = timestamps[0], timestamps[-1]
    if (last.year, last.month) != (first.year, first.month):
        raise SpanMismatch("trace crosses a month boundary")
    if month_key(first) != month:
        raise SpanMismatch(
            f"trace lies in {month_key(first)!r}, billed month is {month!r}"
        )
    days_in_month = _month_days(first)

    single, day, night = contract.month_prices(month)
    step_h = grid.step_hours
    day_kwh_terms, night_kwh_terms = [], []
    for k, ts in enumerate(timestamps):
        kwh = trace.p_elec[k] * step_h
        if classify_period(ts) == "Day":
            day_kwh_terms.append(kwh)
        else:
            night_kwh_terms.append(kwh)
    day_kwh = math.fsum(day_kwh_terms)
    night_kwh = math.fsum(night_kwh_terms)

    if contract.is_single:
        energy_m = _to_milli(single * (day_kwh + night_kwh))
    else:
        energy_m = _to_milli(day * day_kwh) + _to_milli(night * night_kwh)

    covered_days = grid.n_steps * grid.step_seconds / 86400.0
    fraction = min(1.0, covered_days / days_in_month)
    peak = peak_power_15min(trace.p_elec, grid)
    capacity_m = _to_milli(contract.capacity_tariff * peak * fraction)
    fixed_m = _to_milli(contract.fixed_charge * fraction)
    return BillBreakdown(
        energy_milli=energy_m,
        capacity_milli=capacity_m,
        fixed_milli=fixed_m,
        peak_kw=peak,
        day_kwh=day_kwh,
        night_kwh=night_kwh,
    )


# synthetic heating-season calendar: February is billed as 28 days
SYNTH_MONTH_DAYS = {"nov": 30, "dec": 31, "jan": 31, "feb": 28}


def _month_days(ts: datetime) -> int:
    key = month_key(ts)
    if key in SYNTH_MONTH_DAYS:
        return SYNTH_MONTH_DAYS[key]
    import calendar

    return calendar.monthrange(ts.year, ts.month)[1]


def month_key(ts: datetime) -> str:
    return {11: "nov", 12: "dec", 1: "jan", 2: "feb"}.get(ts.month, f"m{ts.month:02d}")


def default_contracts() -> list[Contract]:
    """The twelve built-in contracts (published November rates)."""
    return [
        # dynamic, with capacity tariff
        Contract("ddd", day_price=0.307, night_price=0.270,
                 capacity_tariff=3.35, fixed_charge=11.2, dynamic=True),
        Contract("dds", single_price=0.297,
                 capacity_tariff=3.35, fixed_charge=11.2, dynamic=True),
        # dynamic, no capacity tariff
        Contract("dnd", day_price=0.329, night_price=0.292, fixed_charge=19.6, dynamic=True),
        Contract("dns", single_price=0.319, fixed_charge=19.6, dynamic=True),
        # static low, with capacity tariff
        Contract("sdd", day_price=0.278, night_price=0.253,
                 capacity_tariff=3.35, fixed_charge=11.2),
        Contract("sds", single_price=0.270, capacity_tariff=3.35, fixed_charge=11.2),
        # static low, no capacity tariff
        Contract("snd", day_price=0.300, night_price=0.275, fixed_charge=19.6),
        Contract("sns", single_price=0.392, fixed_charge=19.6),
        # static high, with capacity tariff
        Contract("sdd1", day_price=0.307, night_price=0.270,
                 capacity_tariff=3.35, fixed_charge=11.2),
        Contract("sds1", single_price=0.297, capacity_tariff=3.35, fixed_charge=11.2),
        # static high, no capacity tariff
        Contract("snd1", day_price=0.329, night_price=0.292, fixed_charge=19.6),
        Contract("sns1", single_price=0.319, fixed_charge=19.6),
    ]


def load_contracts(path=None) -> list[Contract]:
    """Built-in contracts, optionally overridden/extended from a TOML file.

    File schema::

        [[contract]]
        code = "ddd"
        day_price = 0.31          # or single_price = ...
        night_price = 0.27
        capacity_tariff = 3.35
        fixed_charge = 11.2
        dynamic = true
        [contract.monthly.jan]    # dynamic month overrides
        day = 0.35
        night = 0.30
    """
    contracts = {c.code: c for c in default_contracts()}
    if path is None:
        return list(contracts.values())
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    seen: set[str] = set()
    for entry in data.get("contract", []):
        if "code" not in entry:
            raise SchemaError("contract entry without code")
        code = str(entry["code"])
        if code in seen:
            raise DuplicateCode(f"contract {code!r} defined twice")
        seen.add(code)
        monthly = entry.get("monthly", {})
        if not isinstance(monthly, dict):
            raise SchemaError(f"{code}: monthly must be a table")
        base = contracts.get(code)
        kwargs = {
            "code": code,
            "single_price": entry.get("single_price"),
            "day_price": entry.get("day_price"),
            "night_price": entry.get("night_price"),
            "capacity_tariff": entry.get("capacity_tariff", 0.0),
            "fixed_charge": entry.get("fixed_charge", 0.0),
            "dynamic": entry.get("dynamic", False),
            "per_month_prices": monthly,
        }
        if base is not None:
            # partial override of a built-in contract
            kwargs = {
                "code": code,
                "single_price": entry.get("single_price", base.single_price),
                "day_price": entry.get("day_price", base.day_price),
                "night_price": entry.get("night_price", base.night_price),
                "capacity_tariff": entry.get("capacity_tariff", base.capacity_tariff),
                "fixed_charge": entry.get("fixed_charge", base.fixed_charge),
                "dynamic": entry.get("dynamic", base.dynamic),
                "per_month_prices": {**base.per_month_prices, **monthly},
            }
        contracts[code] = Contract(**kwargs)
    return list(contracts.values())


def price_series(contract: Contract, grid: TimeGrid, month: str) -> np.ndarray:
    """Per-step energy price [EUR/kWh] under ``contract`` for ``month``."""
    single, day, night = contract.month_prices(month)
    if contract.is_single:
        return np.full(grid.n_steps, float(single))
    return np.array(
        [day if classify_period(ts) == "Day" else night for ts in grid.timestamps()],
        dtype=float,
    )


def write_bill_csv(rows: list[dict], path) -> None:
    """Bill report CSV: contract,month,energy_eur,capacity_eur,fixed_eur,total_eur,peak_kw."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["contract", "month", "energy_eur", "capacity_eur", "fixed_eur", "total_eur", "peak_kw"]
        )
        for row in rows:
            b: BillBreakdown = row["bill"]
            writer.writerow(
                [
                    row["contract"],
                    row["month"],
                    f"{b.energy_cost:.3f}",
                    f"{b.capacity_cost:.3f}",
                    f"{b.fixed_cost:.3f}",
                    f"{b.total:.3f}",
                    f"{b.peak_kw:.4f}",
                ]
            )
