"""Fanger predicted mean vote and the percentile comfort constraint.

PMV follows the ISO 7730 steady-state heat-balance equations with the
clothing surface temperature obtained by damped fixed-point iteration. The
constraint metric is the 80th percentile of |PMV| over occupied steps minus
0.5: feasible (g <= 0) means at least 80 % of occupied time sits within the
+-0.5 comfort band.

The simulator has no radiant model, so traces are evaluated with mean
radiant temperature equal to air temperature. Remaining environment fields
default to winter indoor conditions: RH 50 %, air speed 0.1 m/s, 1.2 met,
1.0 clo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import SimTrace
from .errors import NoConvergence, NoOccupiedSteps

PMV_QUANTILE = 0.80
PMV_LIMIT = 0.5
_TCL_TOL = 1e-5
_TCL_MAX_ITER = 200


@dataclass(frozen=True)
class ComfortConditions:
    t_air: float = 21.0
    t_radiant: float = 21.0
    rel_humidity: float = 50.0
    air_speed: float = 0.1
    met: float = 1.2
    clo: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.rel_humidity <= 100.0):
            raise ValueError("rel_humidity outside [0, 100]")
        if self.air_speed < 0:
            raise ValueError("air_speed must be non-negative")
        if self.met <= 0:
            raise ValueError("met must be positive")
        if self.clo < 0:
            raise ValueError("clo must be non-negative")


@dataclass(frozen=True)
class ComfortStats:
    pmv_series: np.ndarray  # PMV per occupied step
    pmv_cdf_80: float       # 80th percentile of |PMV| over occupied steps
    g_value: float          # pmv_cdf_80 - 0.5

    def __post_init__(self):
        object.__setattr__(self, "pmv_series", np.asarray(self.pmv_series, dtype=float))
        if not np.all(np.isfinite(self.pmv_series)):
            raise ValueError("pmv_series entries must be finite")


def pmv(c: ComfortConditions) -> float:
    """Fanger PMV; raw (unclamped) value on the nominal -3..+3 scale."""
    ta, tr = c.t_air, c.t_radiant
    pa = c.rel_humidity * 10.0 * math.exp(16.6536 - 4030.183 / (ta + 235.0))
    icl = 0.155 * c.clo
    m = c.met * 58.15
    mw = m  # no external work
    fcl = 1.0 + 1.29 * icl if icl <= 0.078 else 1.05 + 0.645 * icl
    hcf = 12.1 * math.sqrt(c.air_speed)
    taa = ta + 273.0
    tra = tr + 273.0

    # clothing surface temperature by damped fixed point on xn = tcl/100
    tcla = taa + (35.5 - ta) / (3.5 * icl + 0.1)
    p1 = icl * fcl
    p2 = p1 * 3.96
    p3 = p1 * 100.0
    p4 = p1 * taa
    p5 = 308.7 - 0.028 * mw + p2 * (tra / 100.0) ** 4
    xn = tcla / 100.0
    xf = tcla / 50.0
    hc = hcf
    n = 0
    while abs(xn - xf) > _TCL_TOL:
        xf = (xf + xn) / 2.0
        hcn = 2.38 * abs(100.0 * xf - taa) ** 0.25
        hc = max(hcf, hcn)
        xn = (p5 + p4 * hc - p2 * xf**4) / (100.0 + p3 * hc)
        n += 1
        if n > _TCL_MAX_ITER:
            raise NoConvergence("clothing surface temperature iteration diverged")
    tcl = 100.0 * xn - 273.0

    hl1 = 3.05e-3 * (5733.0 - 6.99 * mw - pa)          # skin diffusion
    hl2 = 0.42 * (mw - 58.15) if mw > 58.15 else 0.0   # sweating
    hl3 = 1.7e-5 * m * (5867.0 - pa)                   # latent respiration
    hl4 = 0.0014 * m * (34.0 - ta)                     # dry respiration
    hl5 = 3.96 * fcl * (xn**4 - (tra / 100.0) ** 4)    # radiation
    hl6 = fcl * hc * (tcl - ta)                        # convection

    ts = 0.303 * math.exp(-0.036 * m) + 0.028
    return ts * (mw - hl1 - hl2 - hl3 - hl4 - hl5 - hl6)


def percentile_80(values: np.ndarray) -> float:
    """80th percentile with linear interpolation between closest ranks."""
    return float(np.percentile(np.asarray(values, dtype=float), 100 * PMV_QUANTILE,
                               method="linear"))


def pmv_cdf_80(trace: SimTrace, env_defaults: ComfortConditions | None = None) -> ComfortStats:
    """Comfort statistics of a trace over its occupied steps.

    Indoor temperature drives both air and radiant temperature; the other
    fields come from ``env_defaults``.
    """
    env = env_defaults if env_defaults is not None else ComfortConditions()
    occupied_temps = trace.t_in[trace.occupied]
    if len(occupied_temps) == 0:
        raise NoOccupiedSteps("trace has no occupied steps")
    series = np.array(
        [pmv(replace(env, t_air=float(t), t_radiant=float(t))) for t in occupied_temps]
    )
    cdf80 = percentile_80(np.abs(series))
    return ComfortStats(pmv_series=series, pmv_cdf_80=cdf80, g_value=cdf80 - PMV_LIMIT)
