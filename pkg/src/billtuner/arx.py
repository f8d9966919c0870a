"""ARX identification from PRBS-excited data and multi-step prediction.

Model structure (delay t_d, orders na/nb, three input channels u, t_out,
solar):

    y[t] = -sum_{i=1..na} a[i] * y[t-i]
           + sum_{j=0..nb-1} b[j] . u_arx[t - t_d - j]

Coefficients are estimated by least squares on the one-step-ahead prediction
error, solved through a QR factorization of the regressor matrix. A fitted
model whose A(q) polynomial has roots on or outside the unit circle is
rejected: multi-step MPC predictions would diverge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import HistoryTooShort, InsufficientData, RankDeficient, UnstableModel

N_INPUTS = 3  # u, t_out, solar
RANK_TOL = 1e-10


@dataclass(frozen=True)
class ArxModel:
    a_coeffs: np.ndarray  # (na,), excluding the leading 1
    b_coeffs: np.ndarray  # (nb, 3)
    t_d: int
    na: int
    nb: int

    def __post_init__(self):
        object.__setattr__(self, "a_coeffs", np.asarray(self.a_coeffs, dtype=float))
        object.__setattr__(self, "b_coeffs", np.asarray(self.b_coeffs, dtype=float))
        if self.na < 1 or self.nb < 1 or self.t_d < 0:
            raise ValueError("need na >= 1, nb >= 1, t_d >= 0")
        if self.a_coeffs.shape != (self.na,):
            raise ValueError("a_coeffs must have shape (na,)")
        if self.b_coeffs.shape != (self.nb, N_INPUTS):
            raise ValueError(f"b_coeffs must have shape (nb, {N_INPUTS})")
        if not (np.all(np.isfinite(self.a_coeffs)) and np.all(np.isfinite(self.b_coeffs))):
            raise ValueError("coefficients must be finite")

    @property
    def min_history(self) -> int:
        """Input lags the model reaches back: nb + t_d steps before 'now'."""
        return self.nb + self.t_d

    def is_stable(self) -> bool:
        poly = np.concatenate(([1.0], self.a_coeffs))
        roots = np.roots(poly)
        return bool(len(roots) == 0 or np.max(np.abs(roots)) < 1.0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "na": self.na,
                "nb": self.nb,
                "t_d": self.t_d,
                "a": self.a_coeffs.tolist(),
                "b": self.b_coeffs.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ArxModel":
        d = json.loads(text)
        return cls(
            a_coeffs=np.asarray(d["a"], dtype=float),
            b_coeffs=np.asarray(d["b"], dtype=float),
            t_d=int(d["t_d"]),
            na=int(d["na"]),
            nb=int(d["nb"]),
        )


@dataclass(frozen=True)
class PrbsConfig:
    """Two-level excitation: each pseudorandom bit is held ``hold_steps`` long."""

    hold_steps: int = 4
    u_levels: tuple[float, float] = (0.2, 0.8)
    seed: int = 1

    def __post_init__(self):
        low, high = self.u_levels
        if self.hold_steps < 1:
            raise ValueError("hold_steps must be >= 1")
        if not (0.0 <= low < high <= 1.0):
            raise ValueError("need 0 <= low < high <= 1")


def generate_prbs(cfg: PrbsConfig, n_steps: int) -> np.ndarray:
    """Maximal-length LFSR (order 9, taps 9/5) bit stream held per block.

    Deterministic per seed. Level changes only at multiples of ``hold_steps``;
    runs of one level are at most 9 blocks long, so any run spanning a few
    dozen blocks contains both levels.
    """
    if n_steps < cfg.hold_steps:
        raise ValueError("n_steps must be at least hold_steps")
    n_blocks = -(-n_steps // cfg.hold_steps)
    register = cfg.seed % 512
    if register == 0:
        register = 0b101010101
    low, high = cfg.u_levels
    out = np.empty(n_steps)
    for blk in range(n_blocks):
        bit = register & 1
        feedback = ((register >> 0) ^ (register >> 4)) & 1  # x^9 + x^5 + 1
        register = (register >> 1) | (feedback << 8)
        level = high if bit else low
        start = blk * cfg.hold_steps
        out[start : min(start + cfg.hold_steps, n_steps)] = level
    return out


def _regressors(y: np.ndarray, u_arx: np.ndarray, na: int, nb: int, t_d: int):
    n = len(y)
    start = max(na, nb + t_d - 1)
    if start >= n:
        raise InsufficientData("series shorter than the model memory")
    rows = n - start
    phi = np.empty((rows, na + nb * N_INPUTS))
    for i in range(1, na + 1):
        phi[:, i - 1] = -y[start - i : n - i]
    for j in range(nb):
        lag = t_d + j
        phi[:, na + j * N_INPUTS : na + (j + 1) * N_INPUTS] = u_arx[start - lag : n - lag]
    return phi, y[start:n]


def fit_arx(
    y: np.ndarray, u_arx: np.ndarray, na: int = 4, nb: int = 4, t_d: int = 1
) -> tuple[ArxModel, float]:
    """Least-squares ARX fit; returns the model and the one-step RMSE.

    Raises ``RankDeficient`` when the regressors are not persistently
    exciting, ``UnstableModel`` when the fitted A(q) has roots outside the
    unit circle.
    """
    y = np.asarray(y, dtype=float)
    u_arx = np.asarray(u_arx, dtype=float)
    if u_arx.ndim != 2 or u_arx.shape[1] != N_INPUTS:
        raise ValueError(f"u_arx must be (n, {N_INPUTS})")
    if len(y) != len(u_arx):
        raise ValueError("y and u_arx must have equal length")
    if len(y) <= na + nb + t_d + 10:
        raise InsufficientData(f"need more than {na + nb + t_d + 10} samples")

    phi, target = _regressors(y, u_arx, na, nb, t_d)
    if phi.shape[0] < phi.shape[1]:
        raise InsufficientData("fewer regression rows than coefficients")
    q, r = np.linalg.qr(phi)
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_TOL * max(diag.max(), 1.0):
        raise RankDeficient("regressor matrix singular to tolerance")
    theta = np.linalg.solve(r, q.T @ target)

    model = ArxModel(
        a_coeffs=theta[:na],
        b_coeffs=theta[na:].reshape(nb, N_INPUTS),
        t_d=t_d,
        na=na,
        nb=nb,
    )
    if not model.is_stable():
        raise UnstableModel("fitted A(q) has roots on or outside the unit circle")
    residual = phi @ theta - target
    rmse = float(np.sqrt(np.mean(residual**2)))
    return model, rmse


def one_step_rmse(model: ArxModel, y: np.ndarray, u_arx: np.ndarray) -> float:
    """One-step-ahead prediction RMSE of ``model`` on held-out data."""
    phi, target = _regressors(
        np.asarray(y, dtype=float), np.asarray(u_arx, dtype=float),
        model.na, model.nb, model.t_d,
    )
    theta = np.concatenate([model.a_coeffs, model.b_coeffs.reshape(-1)])
    return float(np.sqrt(np.mean((phi @ theta - target) ** 2)))


def predict(model: ArxModel, y_hist: np.ndarray, u_arx: np.ndarray) -> np.ndarray:
    """Recursive multi-step simulation, feeding predictions back as outputs.

    ``y_hist`` holds the last measurements, most recent last (length >= na).
    ``u_arx`` stacks the ARX inputs: the first ``nb + t_d`` rows are history
    (most recent last), the remaining rows are the future inputs; one output
    is predicted per future row.
    """
    y_hist = np.asarray(y_hist, dtype=float)
    u_arx = np.asarray(u_arx, dtype=float)
    if len(y_hist) < model.na:
        raise HistoryTooShort(f"need at least na={model.na} outputs")
    n_hist = model.min_history
    if len(u_arx) < n_hist + 1:
        raise HistoryTooShort(f"need at least nb + t_d + 1 = {n_hist + 1} input rows")
    horizon = len(u_arx) - n_hist

    y = np.concatenate([y_hist[-model.na :], np.empty(horizon)])
    for s in range(horizon):
        t = model.na + s
        acc = -np.dot(model.a_coeffs, y[t - model.na : t][::-1])
        for j in range(model.nb):
            # input at relative time s - t_d - j, stored at offset n_hist
            acc += float(np.dot(model.b_coeffs[j], u_arx[n_hist + s - model.t_d - j]))
        y[t] = acc
    return y[model.na :]
