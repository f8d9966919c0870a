"""Experiment harness: wires plant, controllers, tuner, comfort and billing.

The workflow mirrors a contract-shopping study for one simulated dwelling:

1. ``identify_arx``  - excite the reference plant with a PRBS for a month
   and fit the controller's prediction model (cached on disk).
2. ``evaluate_theta`` - the black box: run the Mask MPC with a given tuning
   vector over the scenario, return (monthly bill, comfort slack, trace).
3. ``tune_contract``  - constrained Bayesian optimization of the tuning
   vector for one contract and month.
4. ``compare_contracts`` - tune every contract, tabulate optimal bills,
   saving potential and saving ratio, and pick the cheapest contract.
5. ``run_baselines``  - rule-based, untuned QP MPC and MIQP MPC reference
   runs for the same scenario.

Weather and identification seeds are derived from the month only, so every
contract and tuner seed sees the same physical scenario; the experiment
seed drives the optimizer (initial design and candidate sets).
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import billing
from .arx import ArxModel, PrbsConfig, fit_arx, generate_prbs
from .billing import Contract, compute_bill, load_contracts, price_series
from .comfort import ComfortConditions, ComfortStats, pmv_cdf_80
from .core import (
    OccupancySchedule,
    SimTrace,
    TimeGrid,
    WeatherSeries,
    load_weather,
    synth_weather,
)
from .errors import BilltunerError
from .mpc import MpcConfig, mpc_policy, prbs_policy, rule_based_policy
from .plant import BuildingParams, HeatPumpModel, PlantState, run_closed_loop
from .tuner import ConfigParams, TuningResult, run_config

MONTHS = ("nov", "dec", "jan", "feb")
MONTH_ANCHOR = {
    "nov": (datetime(2023, 11, 1), 30),
    "dec": (datetime(2023, 12, 1), 31),
    "jan": (datetime(2024, 1, 1), 31),
    "feb": (datetime(2024, 2, 1), 28),
}
# synthetic Belgian-winter weather per month: mean temp, daily amplitude,
# noise std [degC], solar peak [W/m2]
MONTH_WEATHER = {
    "nov": (6.0, 2.5, 0.8, 260.0),
    "dec": (3.5, 2.0, 0.8, 170.0),
    "jan": (2.0, 2.5, 0.8, 200.0),
    "feb": (3.0, 3.0, 0.8, 330.0),
}

# tuning box: mask threshold, input cap, occupied/unoccupied lower bounds
THETA_FIELDS = ("u_low", "u_max", "t_lb_occ", "t_lb_unocc")
THETA_DOMAIN = ((0.0, 0.8), (0.8, 1.0), (21.0, 23.0), (15.0, 18.0))

# untuned expert settings used by the QP and MIQP baseline controllers
EXPERT_T_LB_OCC = 21.5
EXPERT_T_LB_UNOCC = 16.0


@dataclass(frozen=True)
class Theta:
    u_low: float = 0.1
    u_max: float = 1.0
    t_lb_occ: float = 21.0
    t_lb_unocc: float = 16.0

    def __post_init__(self):
        for name, (lo, hi) in zip(THETA_FIELDS, THETA_DOMAIN):
            v = getattr(self, name)
            if not (lo - 1e-9 <= v <= hi + 1e-9):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in THETA_FIELDS])

    @classmethod
    def from_array(cls, arr) -> "Theta":
        arr = np.asarray(arr, dtype=float)
        return cls(**{n: float(v) for n, v in zip(THETA_FIELDS, arr)})


@dataclass(frozen=True)
class ExperimentConfig:
    """Scenario constants shared by every run of one study."""

    plant: BuildingParams = field(default_factory=BuildingParams)
    heat_pump: HeatPumpModel = field(default_factory=HeatPumpModel)
    schedule: OccupancySchedule = field(default_factory=OccupancySchedule)
    comfort_env: ComfortConditions = field(default_factory=ComfortConditions)
    horizon: int = 48
    r_coeff: float = 1.0
    s_coeff: float = 1e4
    t_ub_occ: float = 24.0
    t_ub_unocc: float = 24.0
    arx_orders: tuple = (4, 4, 1)  # na, nb, t_d
    prbs: PrbsConfig = field(default_factory=PrbsConfig)
    sim_days: int | None = None  # None = full month
    init_t_in: float = 20.0
    qp_tol: float = 1e-4
    miqp_node_limit: int = 60
    cache_dir: str = ".billtuner_cache"


@dataclass(frozen=True)
class ExperimentSpec:
    month: str = "jan"
    contract_code: str = "ddd"
    controller: str = "mask"  # baseline | qp | miqp | mask
    seed: int = 0
    weather_source: str | None = None  # CSV path; None = synthetic defaults
    config: ExperimentConfig = field(default_factory=ExperimentConfig)
    config_params: ConfigParams = field(
        default_factory=lambda: ConfigParams(domain=THETA_DOMAIN, max_iters=25, n_init=8)
    )

    def __post_init__(self):
        if self.month not in MONTHS:
            raise ValueError(f"month must be one of {MONTHS}")
        if self.controller not in ("baseline", "qp", "miqp", "mask"):
            raise ValueError(f"unknown controller {self.controller!r}")


@dataclass(frozen=True)
class ContractReport:
    bills: dict          # month -> {code -> BillBreakdown}
    best_theta: dict     # (month, code) -> Theta
    best_contract: str
    saving_potential: dict  # month -> EUR
    saving_ratio: dict      # month -> fraction
    failures: list          # (month, code, message)


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def month_grid(month: str, sim_days: int | None = None, step_seconds: int = 900) -> TimeGrid:
    start, days = MONTH_ANCHOR[month]
    if sim_days is not None:
        days = min(days, sim_days)
    return TimeGrid(start=start, step_seconds=step_seconds, n_steps=days * 86400 // step_seconds)


def month_weather_series(spec: ExperimentSpec, grid: TimeGrid) -> WeatherSeries:
    if spec.weather_source is not None:
        return load_weather(spec.weather_source, grid)
    mean, amp, noise, solar = MONTH_WEATHER[spec.month]
    return synth_weather(mean, amp, noise, solar, _stable_seed("weather", spec.month), grid)


def _plant_hash(cfg: ExperimentConfig) -> str:
    payload = repr((cfg.plant, cfg.heat_pump, cfg.schedule, cfg.arx_orders, cfg.prbs))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def identify_arx(spec: ExperimentSpec) -> tuple[ArxModel, float]:
    """PRBS excitation of the plant for the month, then ARX fit (disk-cached).

    The identification always runs over the full month on the month's own
    weather realization; the PRBS seed is independent of the tuner seed.
    """
    cfg = spec.config
    cache = Path(cfg.cache_dir)
    src_tag = "synth" if spec.weather_source is None else hashlib.sha256(
        str(spec.weather_source).encode()
    ).hexdigest()[:8]
    key = f"arx_{spec.month}_{src_tag}_{_plant_hash(cfg)}.json"
    path = cache / key
    if path.exists():
        data = json.loads(path.read_text())
        return ArxModel.from_json(json.dumps(data["model"])), float(data["rmse"])

    grid = month_grid(spec.month)
    weather = month_weather_series(spec, grid)
    prbs_cfg = replace(cfg.prbs, seed=_stable_seed("prbs", spec.month))
    sequence = generate_prbs(prbs_cfg, grid.n_steps)
    init = PlantState(t_in=cfg.init_t_in, t_mass=cfg.init_t_in)
    trace = run_closed_loop(
        cfg.plant, cfg.heat_pump, prbs_policy(sequence), weather, cfg.schedule, init
    )
    u_arx = np.column_stack([trace.u, trace.weather.t_out, trace.weather.solar])
    na, nb, t_d = cfg.arx_orders
    model, rmse = fit_arx(trace.t_in, u_arx, na=na, nb=nb, t_d=t_d)

    cache.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"model": json.loads(model.to_json()), "rmse": rmse}))
    return model, rmse


def _mpc_config(cfg: ExperimentConfig, theta: Theta) -> MpcConfig:
    return MpcConfig(
        horizon=cfg.horizon,
        r_coeff=cfg.r_coeff,
        s_coeff=cfg.s_coeff,
        u_max=theta.u_max,
        u_low=theta.u_low,
        t_lb_occ=theta.t_lb_occ,
        t_ub_occ=cfg.t_ub_occ,
        t_lb_unocc=theta.t_lb_unocc,
        t_ub_unocc=cfg.t_ub_unocc,
    )


def _controller_policy(spec: ExperimentSpec, theta: Theta, contract: Contract, grid: TimeGrid):
    cfg = spec.config
    if spec.controller == "baseline":
        return rule_based_policy()
    prices = price_series(contract, grid, spec.month)
    mpc_cfg = _mpc_config(cfg, theta)
    model, _ = identify_arx(spec)
    kind = spec.controller
    return mpc_policy(
        kind, model, mpc_cfg, cfg.heat_pump, prices,
        qp_tol=cfg.qp_tol, miqp_node_limit=cfg.miqp_node_limit,
    )


def simulate(spec: ExperimentSpec, theta: Theta) -> SimTrace:
    """One closed-loop run of the configured controller over the scenario."""
    cfg = spec.config
    grid = month_grid(spec.month, cfg.sim_days)
    weather = month_weather_series(spec, grid)
    contract = _get_contract(spec.contract_code)
    policy = _controller_policy(spec, theta, contract, grid)
    init = PlantState(t_in=cfg.init_t_in, t_mass=cfg.init_t_in)
    return run_closed_loop(cfg.plant, cfg.heat_pump, policy, weather, cfg.schedule, init)


def _get_contract(code: str, contracts: list[Contract] | None = None) -> Contract:
    for c in contracts if contracts is not None else load_contracts():
        if c.code == code:
            return c
    raise BilltunerError(f"unknown contract code {code!r}")


def evaluate_theta(theta: Theta, spec: ExperimentSpec) -> tuple[float, float, SimTrace]:
    """The tuner's black box: (monthly bill [EUR], comfort slack g, trace)."""
    trace = simulate(spec, theta)
    contract = _get_contract(spec.contract_code)
    bill = compute_bill(trace, contract, spec.month)
    stats = pmv_cdf_80(trace, spec.config.comfort_env)
    return bill.total, stats.g_value, trace


def tune_contract(
    contract_code: str,
    month: str,
    params: ConfigParams,
    config: ExperimentConfig | None = None,
    log_path=None,
    resume: bool = False,
) -> TuningResult:
    """CONFIG run minimizing the bill for one contract over the theta box."""
    spec = ExperimentSpec(
        month=month,
        contract_code=contract_code,
        controller="mask",
        seed=params.seed,
        config=config if config is not None else ExperimentConfig(),
        config_params=params,
    )
    identify_arx(spec)  # warm the cache before the loop

    def blackbox(theta_vec):
        j, g, _ = evaluate_theta(Theta.from_array(theta_vec), spec)
        return j, g

    return run_config(blackbox, params, log_path=log_path, resume=resume)


def _tune_cell(args):
    code, month, params_dict, config, out_dir = args
    params = ConfigParams(**params_dict)
    log_path = None
    if out_dir is not None:
        log_path = Path(out_dir) / f"tune_{month}_{code}_seed{params.seed}.jsonl"
    try:
        result = tune_contract(code, month, params, config, log_path=log_path)
        return (month, code, result, None)
    except BilltunerError as exc:
        return (month, code, None, str(exc))


def compare_contracts(
    month_list,
    contract_codes,
    params: ConfigParams,
    config: ExperimentConfig | None = None,
    out_dir=None,
    workers: int = 1,
) -> ContractReport:
    """Tune every (contract, month) cell and tabulate the optimal bills.

    Cells are independent; with ``workers > 1`` they run in a process pool
    and results are merged in deterministic (month, code) order. Failed
    cells are reported and do not abort the rest.
    """
    config = config if config is not None else ExperimentConfig()
    params_dict = {
        "domain": params.domain,
        "beta_sqrt_schedule": params.beta_sqrt_schedule,
        "max_iters": params.max_iters,
        "n_init": params.n_init,
        "seed": params.seed,
        "noise_var": params.noise_var,
        "lengthscale": params.lengthscale,
        "n_candidates": params.n_candidates,
        "n_local": params.n_local,
    }
    cells = [(code, month, params_dict, config, out_dir)
             for month in month_list for code in contract_codes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_tune_cell, cells))
    else:
        outcomes = [_tune_cell(c) for c in cells]
    outcomes.sort(key=lambda t: (MONTHS.index(t[0]) if t[0] in MONTHS else 99, t[1]))

    bills: dict = {}
    best_theta: dict = {}
    failures = []
    for month, code, result, err in outcomes:
        if err is not None or result is None or result.best_feasible is None:
            failures.append((month, code, err or "no feasible point found"))
            continue
        theta = Theta.from_array(result.best_feasible.theta)
        spec = ExperimentSpec(
            month=month, contract_code=code, controller="mask",
            seed=params.seed, config=config, config_params=params,
        )
        _, _, trace = evaluate_theta(theta, spec)
        bill = compute_bill(trace, _get_contract(code), month)
        bills.setdefault(month, {})[code] = bill
        best_theta[(month, code)] = theta

    saving_potential = {}
    saving_ratio = {}
    for month, row in bills.items():
        totals = [b.total_milli for b in row.values()]
        worst, best = max(totals), min(totals)
        saving_potential[month] = (worst - best) / 1000.0
        saving_ratio[month] = (worst - best) / worst if worst > 0 else 0.0

    month_sums: dict = {}
    for month, row in bills.items():
        for code, bill in row.items():
            month_sums[code] = month_sums.get(code, 0) + bill.total_milli
    best_contract = min(month_sums, key=lambda c: (month_sums[c], c)) if month_sums else ""

    return ContractReport(
        bills=bills,
        best_theta=best_theta,
        best_contract=best_contract,
        saving_potential=saving_potential,
        saving_ratio=saving_ratio,
        failures=failures,
    )


def run_baselines(spec: ExperimentSpec):
    """Rule-based, untuned QP MPC and MIQP MPC on the scenario.

    The MPC baselines use the untuned expert settings: occupied/unoccupied
    lower bounds 21.5/16 degC, no input cap, no mask threshold.
    """
    expert = Theta(
        u_low=0.0, u_max=1.0, t_lb_occ=EXPERT_T_LB_OCC, t_lb_unocc=EXPERT_T_LB_UNOCC
    )
    contract = _get_contract(spec.contract_code)
    out = {}
    for name in ("baseline", "qp", "miqp"):
        sub = replace(spec, controller=name)
        trace = simulate(sub, expert)
        bill = compute_bill(trace, contract, spec.month)
        stats = pmv_cdf_80(trace, spec.config.comfort_env)
        out[name] = {"bill": bill, "comfort": stats, "trace": trace}
    return out


def emit_report(results: ContractReport, out_dir) -> list[str]:
    """Write the bill table (CSV + Markdown) and PMV-CDF plot data.

    Re-emission over the same results is byte-identical: orders and float
    formats are fixed and no timestamps are embedded.
    """
    if not results.bills:
        raise ValueError("results are empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = []
    for month in sorted(results.bills, key=lambda m: MONTHS.index(m) if m in MONTHS else 99):
        for code in sorted(results.bills[month]):
            rows.append({"contract": code, "month": month, "bill": results.bills[month][code]})
    bills_csv = out / "bills.csv"
    billing.write_bill_csv(rows, bills_csv)
    written.append(str(bills_csv))

    months = sorted(results.bills, key=lambda m: MONTHS.index(m) if m in MONTHS else 99)
    codes = sorted({c for row in results.bills.values() for c in row})
    lines = ["| contract | " + " | ".join(months) + " |",
             "|---" * (len(months) + 1) + "|"]
    for code in codes:
        cells = []
        for month in months:
            bill = results.bills[month].get(code)
            cells.append(f"{bill.total:.2f}" if bill is not None else "-")
        lines.append(f"| {code} | " + " | ".join(cells) + " |")
    sp = [f"{results.saving_potential[m]:.2f}" for m in months]
    sr = [f"{100 * results.saving_ratio[m]:.2f}%" for m in months]
    lines.append("| SP | " + " | ".join(sp) + " |")
    lines.append("| SR | " + " | ".join(sr) + " |")
    lines.append("")
    lines.append(f"Best contract overall: **{results.best_contract}**")
    if results.failures:
        lines.append("")
        lines.append("Failed cells: " + ", ".join(f"{m}/{c}" for m, c, _ in results.failures))
    table_md = out / "bills.md"
    table_md.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(str(table_md))
    return written


def write_cdf_csv(stats: ComfortStats, path) -> None:
    """Sorted |PMV| against empirical quantile (the comfort-constraint curve)."""
    values = np.sort(np.abs(stats.pmv_series))
    n = len(values)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("abs_pmv,quantile\n")
        for i, v in enumerate(values):
            fh.write(f"{v:.6f},{(i + 1) / n:.6f}\n")
