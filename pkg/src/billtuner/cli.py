"""Command-line interface.

Verbs:
    identify   fit and cache the ARX prediction model for a month
    simulate   one closed-loop run, trace CSV + per-step controller log
    tune       CONFIG tuning run for one contract and month
    compare    tune all requested contracts/months, emit the bill table
    baselines  rule-based / QP / MIQP reference runs
    report     regenerate report files from tuning logs

Global flags: --seed, --config <toml>, --out <dir>.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import harness
from .billing import compute_bill, load_contracts
from .comfort import pmv_cdf_80
from .core import write_trace_csv
from .harness import (
    MONTHS,
    THETA_DOMAIN,
    ExperimentConfig,
    ExperimentSpec,
    Theta,
)
from .plant import BuildingParams, HeatPumpModel
from .runtime import limit_blas_threads
from .tuner import ConfigParams, load_log


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    cfg = ExperimentConfig()
    if "plant" in data:
        cfg = replace(cfg, plant=BuildingParams(**data["plant"]))
    if "heat_pump" in data:
        cfg = replace(cfg, heat_pump=HeatPumpModel(**data["heat_pump"]))
    exp = data.get("experiment", {})
    for key in ("horizon", "sim_days", "qp_tol", "miqp_node_limit", "cache_dir"):
        if key in exp:
            cfg = replace(cfg, **{key: exp[key]})
    return cfg


def _config_params(args, config_data=None) -> ConfigParams:
    budget = getattr(args, "budget", None) or 25
    return ConfigParams(domain=THETA_DOMAIN, max_iters=budget, n_init=min(8, budget), seed=args.seed)


def _spec(args, cfg: ExperimentConfig) -> ExperimentSpec:
    return ExperimentSpec(
        month=args.month,
        contract_code=getattr(args, "contract", "ddd"),
        controller=getattr(args, "controller", "mask"),
        seed=args.seed,
        weather_source=getattr(args, "weather", None),
        config=cfg,
        config_params=_config_params(args),
    )


def cmd_identify(args) -> int:
    cfg = _load_config(args.config)
    spec = _spec(args, cfg)
    model, rmse = harness.identify_arx(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"arx_{args.month}.json"
    path.write_text(model.to_json() + "\n", encoding="utf-8")
    print(f"identified ARX for {args.month}: fit rmse {rmse:.4f} K -> {path}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    spec = _spec(args, cfg)
    theta = Theta(
        u_low=args.u_low, u_max=args.u_max,
        t_lb_occ=args.t_lb_occ, t_lb_unocc=args.t_lb_unocc,
    )
    trace = harness.simulate(spec, theta)
    contract = next(c for c in load_contracts() if c.code == spec.contract_code)
    bill = compute_bill(trace, contract, spec.month)
    stats = pmv_cdf_80(trace, cfg.comfort_env)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / f"trace_{args.month}_{spec.controller}.csv"
    write_trace_csv(trace, trace_path)
    print(f"bill {bill.total:.2f} EUR (energy {bill.energy_cost:.2f}, "
          f"capacity {bill.capacity_cost:.2f}, fixed {bill.fixed_cost:.2f}), "
          f"peak {bill.peak_kw:.2f} kW, comfort g = {stats.g_value:+.3f}")
    print(f"trace -> {trace_path}")
    return 0


def cmd_tune(args) -> int:
    cfg = _load_config(args.config)
    params = _config_params(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"tune_{args.month}_{args.contract}_seed{args.seed}.jsonl"
    result = harness.tune_contract(
        args.contract, args.month, params, cfg, log_path=log_path, resume=args.resume
    )
    if result.infeasibility_declared:
        print("infeasibility declared: constraint surrogate positive everywhere")
    if result.best_feasible is None:
        print("no feasible point found")
        return 1
    best = result.best_feasible
    theta = Theta.from_array(best.theta)
    print(f"best feasible bill {best.j_value:.2f} EUR at iteration {best.iteration}")
    print(f"theta: u_low={theta.u_low:.3f} u_max={theta.u_max:.3f} "
          f"t_lb_occ={theta.t_lb_occ:.2f} t_lb_unocc={theta.t_lb_unocc:.2f}")
    print(f"log -> {log_path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    params = _config_params(args)
    months = args.months.split(",")
    codes = (
        [c.code for c in load_contracts()]
        if args.contracts == "all"
        else args.contracts.split(",")
    )
    report = harness.compare_contracts(
        months, codes, params, cfg, out_dir=args.out, workers=args.workers
    )
    files = harness.emit_report(report, args.out)
    for month in report.saving_potential:
        print(f"{month}: SP {report.saving_potential[month]:.2f} EUR, "
              f"SR {100 * report.saving_ratio[month]:.2f}%")
    print(f"best contract: {report.best_contract}")
    for f in files:
        print(f"wrote {f}")
    if report.failures:
        print(f"{len(report.failures)} cells failed", file=sys.stderr)
        return 1
    return 0


def cmd_baselines(args) -> int:
    cfg = _load_config(args.config)
    spec = _spec(args, cfg)
    results = harness.run_baselines(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, res in results.items():
        bill, stats = res["bill"], res["comfort"]
        print(f"{name:9s} bill {bill.total:8.2f} EUR  peak {bill.peak_kw:5.2f} kW  "
              f"g = {stats.g_value:+.3f}")
        harness.write_cdf_csv(stats, out / f"cdf_{args.month}_{name}.csv")
    return 0


def cmd_report(args) -> int:
    logs = sorted(Path(args.out).glob("tune_*.jsonl"))
    if not logs:
        print("no tuning logs found", file=sys.stderr)
        return 1
    for log in logs:
        records = load_log(log)
        feasible = [r for r in records if r.feasible]
        best = min(feasible, key=lambda r: r.j_value) if feasible else None
        label = f"{best.j_value:.2f} EUR" if best else "no feasible point"
        print(f"{log.name}: {len(records)} evaluations, best {label}")
    return 0


def main(argv=None) -> int:
    limit_blas_threads()
    parser = argparse.ArgumentParser(prog="billtuner", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", default=None, help="experiment TOML")
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("identify", help="fit and cache the ARX model")
    p.add_argument("--month", choices=MONTHS, default="jan")
    p.add_argument("--weather", default=None, help="weather CSV path")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("simulate", help="one closed-loop run")
    p.add_argument("--month", choices=MONTHS, default="jan")
    p.add_argument("--contract", default="ddd")
    p.add_argument("--controller", choices=("baseline", "qp", "miqp", "mask"), default="mask")
    p.add_argument("--weather", default=None)
    p.add_argument("--u-low", type=float, default=0.1, dest="u_low")
    p.add_argument("--u-max", type=float, default=1.0, dest="u_max")
    p.add_argument("--t-lb-occ", type=float, default=21.0, dest="t_lb_occ")
    p.add_argument("--t-lb-unocc", type=float, default=16.0, dest="t_lb_unocc")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", help="CONFIG tuning for one contract")
    p.add_argument("--month", choices=MONTHS, default="jan")
    p.add_argument("--contract", default="ddd")
    p.add_argument("--budget", type=int, default=25, help="total evaluations K")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("compare", help="tune all contracts and tabulate")
    p.add_argument("--months", default="jan")
    p.add_argument("--contracts", default="all")
    p.add_argument("--budget", type=int, default=25)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("baselines", help="reference controller runs")
    p.add_argument("--month", choices=MONTHS, default="jan")
    p.add_argument("--contract", default="ddd")
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("report", help="summarize tuning logs under --out")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
