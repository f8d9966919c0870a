"""Constrained Bayesian optimization loop with LCB surrogates (CONFIG).

Each iteration fits independent GP posteriors to the objective and the
constraint, then

1. declares infeasibility and stops when even the optimistic constraint
   surrogate (its lower confidence bound) is positive everywhere, otherwise
2. evaluates the black box at the candidate minimizing the objective LCB
   subject to the constraint LCB being <= 0.

The auxiliary problem is solved over a finite candidate set: scrambled
Sobol points covering the box plus local Gaussian perturbations around the
incumbent, regenerated each iteration from the run seed, so runs are fully
reproducible. Objective observations are z-scored before fitting (and the
LCB is compared in standardized units, which preserves the argmin);
constraint observations are fitted raw because feasibility lives at g = 0.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import gp as gpmod
from .errors import BlackboxFailure, NoFeasibleCandidate

_LOCAL_SCALE = 0.05  # std of local perturbations in unit-box coordinates


@dataclass(frozen=True)
class BetaSchedule:
    """Exploration weight beta^(1/2) as a function of the iteration index."""

    kind: str = "constant"  # or "log"
    value: float = 2.0

    def __post_init__(self):
        if self.kind not in ("constant", "log"):
            raise ValueError(f"unknown beta schedule {self.kind!r}")
        if self.value < 0:
            raise ValueError("value must be non-negative")

    def __call__(self, k: int) -> float:
        if self.kind == "constant":
            return self.value
        return self.value * float(np.sqrt(np.log(np.e + k)))


@dataclass(frozen=True)
class ConfigParams:
    domain: tuple  # ((lo, hi), ...) per dimension
    beta_sqrt_schedule: BetaSchedule = field(default_factory=BetaSchedule)
    max_iters: int = 50   # total evaluation budget K (initial design included)
    n_init: int = 8
    seed: int = 0
    noise_var: float = 1e-6
    lengthscale: float = 0.2
    n_candidates: int = 2048
    n_local: int = 256

    def __post_init__(self):
        dom = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        object.__setattr__(self, "domain", dom)
        if self.max_iters < 1 or self.n_init < 1:
            raise ValueError("max_iters and n_init must be >= 1")
        for lo, hi in dom:
            if not lo < hi:
                raise ValueError("domain box must be non-degenerate")

    @property
    def dim(self) -> int:
        return len(self.domain)

    def to_unit(self, theta: np.ndarray) -> np.ndarray:
        lo = np.array([d[0] for d in self.domain])
        hi = np.array([d[1] for d in self.domain])
        return (np.asarray(theta, dtype=float) - lo) / (hi - lo)

    def from_unit(self, unit: np.ndarray) -> np.ndarray:
        lo = np.array([d[0] for d in self.domain])
        hi = np.array([d[1] for d in self.domain])
        return lo + np.asarray(unit, dtype=float) * (hi - lo)


@dataclass(frozen=True)
class EvalRecord:
    theta: np.ndarray
    j_value: float
    g_value: float
    iteration: int
    wall_time_s: float

    @property
    def feasible(self) -> bool:
        return self.g_value <= 0.0


@dataclass(frozen=True)
class TuningResult:
    history: list
    best_feasible: EvalRecord | None
    infeasibility_declared: bool


def candidate_set(
    dim: int, seed: int, iteration: int, incumbent_unit: np.ndarray | None,
    n_candidates: int = 2048, n_local: int = 256,
) -> np.ndarray:
    """Per-iteration candidates in the unit box, deterministic in (seed, iteration)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(iteration,))
    child_sobol, child_local = ss.spawn(2)
    sobol = qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(child_sobol))
    pts = sobol.random(n_candidates)
    if incumbent_unit is not None and n_local > 0:
        rng = np.random.default_rng(child_local)
        local = incumbent_unit + _LOCAL_SCALE * rng.standard_normal((n_local, dim))
        pts = np.vstack([pts, np.clip(local, 0.0, 1.0)])
    return pts


def check_feasibility(
    gp_g: gpmod.GpPosterior, beta_sqrt: float, candidates: np.ndarray
) -> bool:
    """True when the constraint LCB reaches <= 0 somewhere on the candidates."""
    return bool(np.min(gpmod.lcb_batch(gp_g, candidates, beta_sqrt)) <= 0.0)


def propose_next(
    gp_j: gpmod.GpPosterior,
    gp_g: gpmod.GpPosterior,
    beta_sqrt: float,
    candidates: np.ndarray,
) -> np.ndarray:
    """Candidate minimizing the objective LCB among constraint-LCB-feasible ones.

    Ties break to the smallest candidate index. Raises
    ``NoFeasibleCandidate`` when the feasibility check was skipped and no
    candidate passes the constraint bound.
    """
    g_lcb = gpmod.lcb_batch(gp_g, candidates, beta_sqrt)
    mask = g_lcb <= 0.0
    if not np.any(mask):
        raise NoFeasibleCandidate("run check_feasibility before proposing")
    j_lcb = gpmod.lcb_batch(gp_j, candidates, beta_sqrt)
    j_lcb = np.where(mask, j_lcb, np.inf)
    return candidates[int(np.argmin(j_lcb))]


def _fit_pair(params: ConfigParams, x_unit: np.ndarray, js: np.ndarray, gs: np.ndarray):
    kernel = gpmod.default_kernel(params.dim, params.lengthscale)
    mu, sd = float(np.mean(js)), float(np.std(js))
    if sd < 1e-12:
        sd = 1.0
    gp_j = gpmod.fit(x_unit, (js - mu) / sd, kernel, params.noise_var)
    gp_g = gpmod.fit(x_unit, gs, kernel, params.noise_var)
    return gp_j, gp_g


def _best_feasible(history: list) -> EvalRecord | None:
    feasible = [r for r in history if r.feasible]
    if not feasible:
        return None
    return min(feasible, key=lambda r: (r.j_value, r.iteration))


def run_config(blackbox, params: ConfigParams, log_path=None, resume: bool = False) -> TuningResult:
    """Run the tuning loop: initial Latin hypercube design, then CONFIG steps.

    ``blackbox(theta) -> (j, g)`` is evaluated ``max_iters`` times in total
    (fewer if infeasibility is declared). When ``log_path`` is given every
    record is appended as a JSON line; with ``resume`` the evaluations
    already present in the log are reused instead of re-run.
    """
    history: list[EvalRecord] = []
    if resume and log_path is not None:
        history = load_log(log_path)

    log_fh = open(log_path, "a", encoding="utf-8") if log_path is not None else None

    def evaluate(theta: np.ndarray, k: int) -> EvalRecord:
        t0 = time.perf_counter()
        try:
            j, g = blackbox(theta)
        except Exception as exc:
            if log_fh:
                log_fh.close()
            raise BlackboxFailure(theta, k, exc) from exc
        rec = EvalRecord(
            theta=np.asarray(theta, dtype=float),
            j_value=float(j),
            g_value=float(g),
            iteration=k,
            wall_time_s=time.perf_counter() - t0,
        )
        history.append(rec)
        if log_fh:
            log_fh.write(_record_line(rec) + "\n")
            log_fh.flush()
        return rec

    try:
        ss = np.random.SeedSequence(entropy=params.seed, spawn_key=(0,))
        n_init = min(params.n_init, params.max_iters)
        lhs = qmc.LatinHypercube(d=params.dim, seed=np.random.default_rng(ss))
        init_unit = lhs.random(n_init)
        for k in range(1, n_init + 1):
            if k <= len(history):
                continue
            evaluate(params.from_unit(init_unit[k - 1]), k)

        infeasible = False
        for k in range(n_init + 1, params.max_iters + 1):
            if k <= len(history):
                continue
            x_unit = np.array([params.to_unit(r.theta) for r in history])
            js = np.array([r.j_value for r in history])
            gs = np.array([r.g_value for r in history])
            gp_j, gp_g = _fit_pair(params, x_unit, js, gs)
            beta = params.beta_sqrt_schedule(k)

            incumbent = _best_feasible(history)
            anchor = incumbent if incumbent is not None else min(
                history, key=lambda r: (r.g_value, r.iteration)
            )
            candidates = candidate_set(
                params.dim, params.seed, k, params.to_unit(anchor.theta),
                params.n_candidates, params.n_local,
            )
            if not check_feasibility(gp_g, beta, candidates):
                infeasible = True
                break
            theta_unit = propose_next(gp_j, gp_g, beta, candidates)
            evaluate(params.from_unit(theta_unit), k)
    finally:
        if log_fh:
            log_fh.close()

    return TuningResult(
        history=history,
        best_feasible=_best_feasible(history),
        infeasibility_declared=infeasible,
    )


def _record_line(rec: EvalRecord) -> str:
    return json.dumps(
        {
            "k": rec.iteration,
            "theta": [float(v) for v in rec.theta],
            "j_eur": rec.j_value,
            "g": rec.g_value,
            "feasible": bool(rec.feasible),
            "wall_s": round(rec.wall_time_s, 6),
        }
    )


def load_log(path) -> list[EvalRecord]:
    """Parse a run log back into evaluation records (for resume/reporting)."""
    records = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                records.append(
                    EvalRecord(
                        theta=np.asarray(d["theta"], dtype=float),
                        j_value=float(d["j_eur"]),
                        g_value=float(d["g"]),
                        iteration=int(d["k"]),
                        wall_time_s=float(d["wall_s"]),
                    )
                )
    except FileNotFoundError:
        return []
    records.sort(key=lambda r: r.iteration)
    return records
