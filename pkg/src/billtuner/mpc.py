"""Economic MPC controllers: QP, Mask (QP + input threshold), MIQP, rule-based.

The QP controller minimizes sum_t R*p_t*u_t + S*(eps_lo_t^2 + eps_hi_t^2)
over the horizon subject to the ARX prediction dynamics (condensed into the
inequality rows), soft temperature bands switched by forecast occupancy,
and the hard input box [0, u_max].

The plant draws a startup overhead whenever u > 0, which the linear-cost QP
cannot see. Two remedies are implemented:

* Mask MPC post-processes the first input: values below a tuned threshold
  u_low are cut to zero (the QP itself is unchanged, so the controller
  stays cheap to solve).
* MIQP MPC adds per-step binaries a_t with P_elec,t = phi*u_t + gamma*a_t
  and 0 <= u_t <= a_t*u_max, solved by branch-and-bound on QP relaxations.

Decision-variable layout: QP  -> [u (N), eps_lo (N), eps_hi (N)]
                          MIQP-> [u (N), a (N), eps_lo (N), eps_hi (N)]
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .arx import ArxModel
from .errors import ForecastTooShort, HistoryTooShort, RelaxationInfeasible
from .plant import ForecastWindow, HeatPumpModel, PlantState
from .qp import QpProblem, QpWorkspace, solve_qp

RULE_SETPOINT_OCCUPIED = 21.2
RULE_SETPOINT_UNOCCUPIED = 20.5
RULE_GAIN = 2.0      # per K
RULE_OFFSET = 0.1    # K above setpoint before the output reaches zero

MIQP_INT_TOL = 1e-4


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 48
    r_coeff: float = 1.0
    s_coeff: float = 1e4
    u_max: float = 1.0
    u_low: float = 0.0
    t_lb_occ: float = 21.0
    t_ub_occ: float = 24.0
    t_lb_unocc: float = 16.0
    t_ub_unocc: float = 24.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.r_coeff <= 0 or self.s_coeff <= 0:
            raise ValueError("penalty coefficients must be strictly positive")
        if not (0.0 <= self.u_low <= self.u_max <= 1.0):
            raise ValueError("need 0 <= u_low <= u_max <= 1")
        if self.t_lb_occ > self.t_ub_occ or self.t_lb_unocc > self.t_ub_unocc:
            raise ValueError("temperature bands must satisfy lb <= ub")


@dataclass(frozen=True)
class Forecast:
    """Per-step exogenous data from the current step onward (length >= horizon)."""

    prices: np.ndarray
    t_out: np.ndarray
    solar: np.ndarray
    occupied: np.ndarray

    def __post_init__(self):
        for name in ("prices", "t_out", "solar", "occupied"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        if np.any(self.prices < 0):
            raise ValueError("prices must be non-negative")

    def __len__(self) -> int:
        return min(len(self.prices), len(self.t_out), len(self.solar), len(self.occupied))


@dataclass(frozen=True)
class MpcHistory:
    """Measured lags the ARX prediction needs: outputs and applied inputs.

    ``y`` holds the last >= na indoor temperatures (most recent last);
    ``u_arx`` the last >= nb + t_d applied ARX input rows (u, t_out, solar).
    """

    y: np.ndarray
    u_arx: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "u_arx", np.asarray(self.u_arx, dtype=float))


@dataclass(frozen=True)
class MiqpSolution:
    u: np.ndarray
    alpha: np.ndarray
    objective: float
    nodes_explored: int
    optimal: bool = True
    gap: float = 0.0


def _prediction_operator(model: ArxModel, horizon: int) -> np.ndarray:
    """Sensitivity G of predicted outputs to future inputs: y_pred = G u + c.

    Row p (output at p+1 steps ahead) collects the response through the
    autoregressive recursion; depends only on the model, so policies
    precompute it once per run.
    """
    na, nb, td = model.na, model.nb, model.t_d
    g = np.zeros((horizon, horizon))
    for p in range(horizon):
        t = p + 1  # prediction time relative to 'now'
        for i in range(1, na + 1):
            if t - i >= 1:
                g[p] -= model.a_coeffs[i - 1] * g[t - i - 1]
        for j in range(nb):
            tau = t - td - j  # input time relative to 'now'
            if 0 <= tau < horizon:
                g[p, tau] += model.b_coeffs[j, 0]
    return g


def _free_response(
    model: ArxModel,
    horizon: int,
    y_hist: np.ndarray,
    u_arx_hist: np.ndarray,
    t_out_fc: np.ndarray,
    solar_fc: np.ndarray,
) -> np.ndarray:
    """Affine part c of the prediction: past data plus known exogenous inputs."""
    na, nb, td = model.na, model.nb, model.t_d
    c = np.zeros(horizon)
    n_hist = len(u_arx_hist)
    for p in range(horizon):
        t = p + 1
        acc = 0.0
        for i in range(1, na + 1):
            ti = t - i
            if ti >= 1:
                acc -= model.a_coeffs[i - 1] * c[ti - 1]
            else:
                acc -= model.a_coeffs[i - 1] * y_hist[len(y_hist) - 1 + ti]
        for j in range(nb):
            tau = t - td - j
            b = model.b_coeffs[j]
            if tau >= 0:
                tau_c = min(tau, len(t_out_fc) - 1)  # edge-hold at the window end
                acc += b[1] * t_out_fc[tau_c] + b[2] * solar_fc[tau_c]
            else:
                row = u_arx_hist[n_hist + tau]
                acc += b[0] * row[0] + b[1] * row[1] + b[2] * row[2]
        c[p] = acc
    return c


def _bands(cfg: MpcConfig, occupied: np.ndarray, horizon: int):
    """Per-prediction-step temperature bounds (prediction p is at time p+1)."""
    n_fc = len(occupied)
    idx = np.minimum(np.arange(1, horizon + 1), n_fc - 1)
    occ = np.asarray(occupied, dtype=bool)[idx]
    lb = np.where(occ, cfg.t_lb_occ, cfg.t_lb_unocc)
    ub = np.where(occ, cfg.t_ub_occ, cfg.t_ub_unocc)
    return lb, ub


def _check_lengths(model: ArxModel, cfg: MpcConfig, fc: Forecast, hist: MpcHistory):
    if len(fc) < cfg.horizon:
        raise ForecastTooShort(f"forecast covers {len(fc)} < horizon {cfg.horizon}")
    if len(hist.y) < model.na:
        raise HistoryTooShort(f"need {model.na} output lags, got {len(hist.y)}")
    if len(hist.u_arx) < model.min_history:
        raise HistoryTooShort(
            f"need {model.min_history} input lags, got {len(hist.u_arx)}"
        )


def build_qp_mpc(
    model: ArxModel,
    cfg: MpcConfig,
    fc: Forecast,
    hist: MpcHistory,
    g_op: np.ndarray | None = None,
) -> QpProblem:
    """Assemble the economic QP over [u, eps_lo, eps_hi].

    ``g_op`` optionally passes a precomputed prediction operator (it depends
    only on the model and the horizon).
    """
    _check_lengths(model, cfg, fc, hist)
    n = cfg.horizon
    g = _prediction_operator(model, n) if g_op is None else g_op
    c = _free_response(model, n, hist.y, hist.u_arx, fc.t_out, fc.solar)
    lb_band, ub_band = _bands(cfg, fc.occupied, n)

    nv = 3 * n
    h = np.zeros((nv, nv))
    h[np.arange(n, 3 * n), np.arange(n, 3 * n)] = 2.0 * cfg.s_coeff
    f = np.zeros(nv)
    f[:n] = cfg.r_coeff * np.asarray(fc.prices[:n], dtype=float)

    # lb_p - y_p <= eps_lo_p  and  y_p - ub_p <= eps_hi_p
    a = np.zeros((2 * n, nv))
    b = np.zeros(2 * n)
    a[:n, :n] = -g
    a[:n, n : 2 * n] = -np.eye(n)
    b[:n] = c - lb_band
    a[n:, :n] = g
    a[n:, 2 * n :] = -np.eye(n)
    b[n:] = ub_band - c

    lb = np.zeros(nv)
    ub = np.concatenate([np.full(n, cfg.u_max), np.full(2 * n, np.inf)])
    return QpProblem(h_matrix=h, f_vector=f, a_ineq=a, b_ineq=b, lb=lb, ub=ub)


def apply_mask(u_mpc: float, u_low: float) -> float:
    """Zero out sub-threshold inputs; at the threshold the value passes through."""
    if not 0.0 <= u_mpc <= 1.0:
        raise ValueError(f"u_mpc {u_mpc} outside [0, 1]")
    return 0.0 if u_mpc < u_low else u_mpc


def rule_based_control(t_in: float, occupied: bool) -> float:
    """Proportional law around the occupancy setpoint, saturated to [0, 1]."""
    if not math.isfinite(t_in):
        raise ValueError("t_in must be finite")
    setpoint = RULE_SETPOINT_OCCUPIED if occupied else RULE_SETPOINT_UNOCCUPIED
    return min(1.0, max(0.0, RULE_GAIN * (setpoint + RULE_OFFSET - t_in)))


_STATUS_FREE = -1
_STATUS_OFF = 0
_STATUS_ON = 1


def solve_miqp(
    model: ArxModel,
    cfg: MpcConfig,
    fc: Forecast,
    hist: MpcHistory,
    hp: HeatPumpModel,
    node_limit: int = 10000,
    qp_tol: float = 1e-6,
    g_op: np.ndarray | None = None,
) -> MiqpSolution:
    """Branch-and-bound over the per-step on/off binaries.

    Node relaxations eliminate the binaries exactly: with positive prices
    the cheapest a_t covering the coupling u_t <= a_t*u_max is u_t/u_max,
    so a free step carries the adjusted price R*p_t*(phi + gamma/u_max), an
    ON step carries R*p_t*phi plus the constant gamma term and an OFF step
    pins u_t = 0. Every node is therefore the same QP as the economic MPC
    (same matrices, one shared workspace) with modified linear cost and
    bounds, and its optimum equals the optimum of the full formulation with
    a_t in [0, 1].

    Depth-first, branching on the step whose implied binary u_t/u_max is
    most fractional. When the node limit is hit the best incumbent is
    returned with ``optimal=False`` and the remaining gap. Raises
    ``RelaxationInfeasible`` when no incumbent could be certified.
    """
    if node_limit < 1:
        raise ValueError("node_limit must be >= 1")
    _check_lengths(model, cfg, fc, hist)
    n = cfg.horizon
    base = build_qp_mpc(model, cfg, fc, hist, g_op=g_op)
    ws = QpWorkspace(base.h_matrix, base.a_ineq)
    prices = cfg.r_coeff * np.asarray(fc.prices[:n], dtype=float)
    gamma_term = prices * hp.gamma
    if cfg.u_max <= 0.0:
        zero = np.zeros(n)
        return MiqpSolution(u=zero, alpha=zero, objective=base.objective(np.zeros(3 * n)),
                            nodes_explored=0, optimal=True, gap=0.0)

    def node_problem(status: np.ndarray) -> QpProblem:
        f = base.f_vector.copy()
        free = status == _STATUS_FREE
        on = status == _STATUS_ON
        f[:n] = prices * hp.phi
        f[:n][free] += gamma_term[free] / cfg.u_max
        ub = base.ub.copy()
        ub[:n][status == _STATUS_OFF] = 0.0
        return QpProblem(
            h_matrix=base.h_matrix, f_vector=f, a_ineq=base.a_ineq,
            b_ineq=base.b_ineq, lb=base.lb, ub=ub,
        )

    def node_constant(status: np.ndarray) -> float:
        return float(np.sum(gamma_term[status == _STATUS_ON]))

    best_obj = np.inf
    best_u = None
    best_status = None
    last_relax = None  # (status, u, warm) of the last certified relaxation
    nodes = 0

    def certify_rounded(status, u_rel, warm):
        """Pin ON/OFF from a relaxation (ON keeps coupling feasible) and solve."""
        nonlocal best_obj, best_u, best_status
        fixed = status.copy()
        fixed[status == _STATUS_FREE] = np.where(
            u_rel[status == _STATUS_FREE] > MIQP_INT_TOL * cfg.u_max,
            _STATUS_ON, _STATUS_OFF,
        )
        fsol = solve_qp(node_problem(fixed), tol=qp_tol,
                        x0=warm[0], y0=warm[1], workspace=ws)
        if fsol.status == "Optimal":
            obj = fsol.objective + node_constant(fixed)
            if obj < best_obj:
                best_obj = obj
                best_u = fsol.x[:n].copy()
                best_status = fixed

    # stack entries: (status vector, parent bound, warm start)
    root = np.full(n, _STATUS_FREE, dtype=np.int8)
    stack = [(root, -np.inf, None)]

    while stack and nodes < node_limit:
        status, parent_bound, warm = stack.pop()
        if parent_bound >= best_obj - 1e-9:
            continue
        nodes += 1
        prob = node_problem(status)
        x0, y0 = (warm if warm is not None else (None, None))
        sol = solve_qp(prob, tol=qp_tol, x0=x0, y0=y0, workspace=ws)
        if sol.status == "Infeasible":
            continue
        trusted = sol.status == "Optimal"
        const = node_constant(status)
        node_obj = sol.objective + const
        if trusted and node_obj >= best_obj - 1e-9:
            continue
        u = np.clip(sol.x[:n], 0.0, cfg.u_max)
        ratio = u / cfg.u_max
        if trusted:
            last_relax = (status, u, (sol.warm_x, sol.warm_duals))
            if nodes == 1:
                # upper bound from the rounded root: prunes the dive early
                certify_rounded(status, u, (sol.warm_x, sol.warm_duals))
        frac = np.where(status == _STATUS_FREE,
                        np.minimum(ratio, 1.0 - ratio), 0.0)
        j_branch = int(np.argmax(frac))
        if frac[j_branch] <= MIQP_INT_TOL:
            if not trusted:
                continue
            # implied binaries integral; re-solve with the pattern pinned so
            # the incumbent objective is exact, not adjusted-price-approximate
            fixed = status.copy()
            fixed[status == _STATUS_FREE] = np.where(
                ratio[status == _STATUS_FREE] >= 0.5, _STATUS_ON, _STATUS_OFF
            )
            fsol = solve_qp(
                node_problem(fixed), tol=qp_tol,
                x0=sol.warm_x, y0=sol.warm_duals, workspace=ws,
            )
            if fsol.status == "Optimal":
                fixed_obj = fsol.objective + node_constant(fixed)
                if fixed_obj < best_obj:
                    best_obj = fixed_obj
                    best_u = fsol.x[:n].copy()
                    best_status = fixed.copy()
            continue
        child_on = status.copy()
        child_off = status.copy()
        child_on[j_branch] = _STATUS_ON
        child_off[j_branch] = _STATUS_OFF
        child_bound = node_obj if trusted else parent_bound
        warm_next = (sol.warm_x, sol.warm_duals)
        children = [
            (child_off, child_bound, warm_next),
            (child_on, child_bound, warm_next),
        ]
        if ratio[j_branch] < 0.5:
            children.reverse()  # LIFO: explore the leaning side first
        stack.extend(children)

    if best_u is None and last_relax is not None:
        certify_rounded(*last_relax)
    if best_u is None:
        raise RelaxationInfeasible(
            f"no certified incumbent within {nodes} nodes (limit {node_limit})"
        )
    complete = not stack
    gap = 0.0
    if not complete:
        gap = float(best_obj - min(entry[1] for entry in stack))
    alpha = np.where(
        best_status == _STATUS_ON, 1.0,
        np.where(best_status == _STATUS_OFF, 0.0,
                 (best_u > 0.5 * cfg.u_max).astype(float)),
    )
    u_out = np.where(alpha > 0, np.clip(best_u, 0.0, cfg.u_max), 0.0)
    return MiqpSolution(
        u=u_out,
        alpha=alpha,
        objective=float(best_obj),
        nodes_explored=nodes,
        optimal=complete,
        gap=max(gap, 0.0),
    )


@dataclass
class MpcPolicy:
    """Receding-horizon policy over a closed-loop run; one instance per run.

    Maintains the measured output/input history the ARX prediction needs,
    warm-starts each step's QP from the previous solution, and keeps a
    per-step JSONL-able log. Falls back to the rule-based law for steps
    whose QP does not converge.
    """

    kind: str  # "qp" | "mask" | "miqp"
    model: ArxModel
    cfg: MpcConfig
    hp: HeatPumpModel
    prices: np.ndarray
    qp_tol: float = 1e-4
    qp_max_iter: int = 8000
    miqp_node_limit: int = 10000
    log: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("qp", "mask", "miqp"):
            raise ValueError(f"unknown controller kind {self.kind!r}")
        self.prices = np.asarray(self.prices, dtype=float)
        self._g_op = _prediction_operator(self.model, self.cfg.horizon)
        self._y_hist: list[float] = []
        self._u_hist: list[np.ndarray] = []
        self._warm: tuple | None = None
        self._workspace: QpWorkspace | None = None
        self._rho: float | None = None

    def _forecast(self, k: int, window: ForecastWindow) -> Forecast:
        need = self.cfg.horizon + 1
        def pad(arr):
            arr = np.asarray(arr[:need])
            if len(arr) >= need:
                return arr
            return np.concatenate([arr, np.full(need - len(arr), arr[-1])])
        prices = pad(self.prices[k:]) if k < len(self.prices) else np.full(
            need, self.prices[-1]
        )
        return Forecast(
            prices=prices,
            t_out=pad(window.t_out),
            solar=pad(window.solar),
            occupied=pad(window.occupied),
        )

    def _shift_warm(self, wx: np.ndarray, wd: np.ndarray):
        """Advance a solution one step in time for the next warm start."""
        n = self.cfg.horizon

        def sh(vec):
            return np.concatenate([vec[1:], vec[-1:]])

        x = np.concatenate([sh(wx[:n]), sh(wx[n : 2 * n]), sh(wx[2 * n :])])
        m = 2 * n
        d = np.concatenate(
            [
                sh(wd[:n]),
                sh(wd[n:m]),
                sh(wd[m : m + n]),
                sh(wd[m + n : m + 2 * n]),
                sh(wd[m + 2 * n :]),
            ]
        )
        return x, d

    def _history(self, state: PlantState, window: ForecastWindow) -> MpcHistory:
        na, n_lag = self.model.na, self.model.min_history
        y_full = self._y_hist + [state.t_in]
        if len(y_full) < na:
            y_full = [state.t_in] * (na - len(y_full)) + y_full
        u_rows = self._u_hist[-n_lag:]
        if len(u_rows) < n_lag:
            filler = np.array([0.0, float(window.t_out[0]), float(window.solar[0])])
            u_rows = [filler] * (n_lag - len(u_rows)) + u_rows
        return MpcHistory(y=np.array(y_full[-na:]), u_arx=np.array(u_rows))

    def __call__(self, k: int, ts, state: PlantState, window: ForecastWindow) -> float:
        fc = self._forecast(k, window)
        hist = self._history(state, window)
        t0 = time.perf_counter()
        masked = False
        status = "Optimal"
        obj = math.nan
        if self.kind == "miqp":
            try:
                msol = solve_miqp(
                    self.model, self.cfg, fc, hist, self.hp,
                    node_limit=self.miqp_node_limit, qp_tol=self.qp_tol,
                    g_op=self._g_op,
                )
                u_first = float(msol.u[0])
                obj = msol.objective
                status = "Optimal" if msol.optimal else "NodeLimitHit"
            except RelaxationInfeasible:
                status = "Fallback"
                u_first = rule_based_control(state.t_in, bool(window.occupied[0]))
        else:
            prob = build_qp_mpc(self.model, self.cfg, fc, hist, g_op=self._g_op)
            if self._workspace is None:
                self._workspace = QpWorkspace(prob.h_matrix, prob.a_ineq)
            x0, y0 = self._warm if self._warm is not None else (None, None)
            sol = solve_qp(
                prob, tol=self.qp_tol, max_iter=self.qp_max_iter,
                x0=x0, y0=y0, workspace=self._workspace, rho0=self._rho,
            )
            self._rho = sol.rho_final
            if sol.warm_x is not None:
                self._warm = self._shift_warm(sol.warm_x, sol.warm_duals)
            if sol.status == "Optimal":
                u_first = float(sol.x[0])
                obj = sol.objective
                if self.kind == "mask":
                    u_masked = apply_mask(min(max(u_first, 0.0), 1.0), self.cfg.u_low)
                    masked = u_masked != u_first
                    u_first = u_masked
            else:
                status = "Fallback"
                u_first = rule_based_control(state.t_in, bool(window.occupied[0]))
        solve_ms = (time.perf_counter() - t0) * 1e3

        u_applied = min(max(u_first, 0.0), min(self.cfg.u_max, 1.0))
        self.log.append(
            {
                "t": k,
                "status": status,
                "u_first": round(u_applied, 8),
                "obj": None if math.isnan(obj) else round(obj, 8),
                "solve_ms": round(solve_ms, 3),
                "masked": masked,
            }
        )
        # record what was actually applied: the ARX channels see the plant input
        self._y_hist.append(state.t_in)
        self._u_hist.append(np.array([u_applied, window.t_out[0], window.solar[0]]))
        return u_applied

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.log:
                fh.write(json.dumps(entry) + "\n")


def mpc_policy(
    kind: str,
    model: ArxModel,
    cfg: MpcConfig,
    hp: HeatPumpModel,
    prices: np.ndarray,
    qp_tol: float = 1e-4,
    qp_max_iter: int = 8000,
    miqp_node_limit: int = 10000,
) -> MpcPolicy:
    """Policy callback for ``run_closed_loop``; applies the first input only."""
    return MpcPolicy(
        kind=kind, model=model, cfg=cfg, hp=hp, prices=prices,
        qp_tol=qp_tol, qp_max_iter=qp_max_iter, miqp_node_limit=miqp_node_limit,
    )


def rule_based_policy():
    """Rule-based baseline as a closed-loop policy callback."""

    def policy(k: int, ts, state: PlantState, window: ForecastWindow) -> float:
        return rule_based_control(state.t_in, bool(window.occupied[0]))

    return policy


def prbs_policy(sequence: np.ndarray):
    """Replay a fixed excitation sequence (for identification runs)."""
    sequence = np.asarray(sequence, dtype=float)

    def policy(k: int, ts, state: PlantState, window: ForecastWindow) -> float:
        return float(sequence[k])

    return policy
