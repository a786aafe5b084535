"""Derivative-free search over low-dimensional protocol families.

Every family alternates a hot and a cold stroke with the bath switched
abruptly between its two extreme temperatures. Parameters are mapped from an
unconstrained vector through logistic functions, so a plain multi-start
Nelder-Mead stays inside the control box. Candidates are scored with the exact
limit cycle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from .engine import EngineParams, Protocol, Segment, StepSizeError
from .limit_cycle import CycleMetrics, LimitCycleError, Normalization, Weights, cycle_metrics, figure_of_merit

FAMILIES = ("otto", "trapezoid", "n-segment")
TAU_BOUNDS = (1e-3, 100.0)
STROKE_BOUNDS = (0.05, 100.0)
PENALTY = -1e3


@dataclass(frozen=True)
class Family:
    name: str
    n_nodes: int = 1  # ramp pieces per stroke for the n-segment family

    @property
    def dim(self) -> int:
        if self.name == "otto":
            return 4
        return 2 * (self.n_nodes + 1) + 2

    def boxes(self, params: EngineParams) -> list[tuple[float, float]]:
        u = (params.u_min, params.u_max)
        if self.name == "otto":
            return [u, u, (0.02, 0.98), tuple(math.log(t) for t in TAU_BOUNDS)]
        logd = tuple(math.log(t) for t in STROKE_BOUNDS)
        return [u] * (2 * (self.n_nodes + 1)) + [logd, logd]

    def protocol(self, x, params: EngineParams) -> Protocol:
        """Protocol for box-valued parameters ``x``."""
        bh, bc = params.beta_hot, params.beta_cold
        if self.name == "otto":
            uh, uc, th, logtau = x
            tau = math.exp(logtau)
            return Protocol((Segment(th * tau, uh, uh, bh), Segment((1 - th) * tau, uc, uc, bc)))
        n = self.n_nodes
        hot, cold = x[: n + 1], x[n + 1: 2 * n + 2]
        dh, dc = math.exp(x[-2]) / n, math.exp(x[-1]) / n
        segs = [Segment(dh, hot[k], hot[k + 1], bh) for k in range(n)]
        segs += [Segment(dc, cold[k], cold[k + 1], bc) for k in range(n)]
        return Protocol(tuple(segs))


def family(name: str, n_nodes: int = 3) -> Family:
    if name == "otto":
        return Family("otto")
    if name == "trapezoid":
        return Family("trapezoid", 1)
    if name == "n-segment":
        if n_nodes < 1:
            raise ValueError("n_nodes must be positive")
        return Family("n-segment", n_nodes)
    raise ValueError(f"unknown family {name!r}; choose from {FAMILIES}")


@dataclass(frozen=True)
class BaselineResult:
    protocol: Protocol
    metrics: CycleMetrics
    F: float
    family: str
    n_evals: int


def _to_box(v, boxes):
    return [lo + (hi - lo) * float(expit(vi)) for vi, (lo, hi) in zip(v, boxes)]


def _from_box(x, boxes):
    out = []
    for xi, (lo, hi) in zip(x, boxes):
        frac = min(max((xi - lo) / (hi - lo), 1e-6), 1 - 1e-6)
        out.append(float(logit(frac)))
    return np.array(out)


def _default_starts(fam: Family, params: EngineParams, rng, n_starts: int):
    """Engine-like starting points: wide gap on the hot stroke, narrow on the cold one."""
    boxes = fam.boxes(params)
    hi_u = params.u_min + 0.9 * (params.u_max - params.u_min)
    lo_u = params.u_min + 0.3 * (params.u_max - params.u_min)
    if fam.name == "otto":
        seeds = [[hi_u, lo_u, 0.5, math.log(0.01)], [hi_u, lo_u, 0.5, math.log(2.0)]]
    else:
        n = fam.n_nodes
        seeds = [list(np.linspace(hi_u, lo_u, n + 1)) + list(np.linspace(lo_u * 0.8, hi_u * 0.8, n + 1))
                 + [math.log(d), math.log(d)] for d in (2.0, 8.0)]
    starts = [_from_box(s, boxes) for s in seeds]
    while len(starts) < n_starts:
        starts.append(rng.normal(0.0, 1.5, fam.dim))
    return starts[:n_starts]


def optimize_baseline(family_name: str, weights: Weights, norm: Normalization, params: EngineParams,
                      budget: int = 400, seed: int = 0, n_starts: int = 4, n_nodes: int = 3,
                      substeps: int = 32) -> BaselineResult:
    """Multi-start Nelder-Mead within ``budget`` exact limit-cycle evaluations."""
    if budget < 100:
        raise ValueError("budget must be at least 100 evaluations")
    fam = family(family_name, n_nodes)
    boxes = fam.boxes(params)
    rng = np.random.default_rng(seed)
    count = [0]
    best = [PENALTY, None]

    def neg_f(v):
        if count[0] >= budget:
            return -best[0]
        count[0] += 1
        x = _to_box(v, boxes)
        try:
            proto = fam.protocol(x, params)
            F = figure_of_merit(cycle_metrics(proto, params, substeps=substeps), weights, norm)
        except (LimitCycleError, StepSizeError, FloatingPointError, ValueError):
            return -PENALTY
        if not math.isfinite(F):
            return -PENALTY
        if F > best[0]:
            best[:] = [F, x]
        return -F

    starts = _default_starts(fam, params, rng, n_starts)
    per_start = budget // n_starts
    for v0 in starts:
        if count[0] >= budget:
            break
        optimize.minimize(neg_f, v0, method="Nelder-Mead",
                          options={"maxfev": per_start, "xatol": 1e-8, "fatol": 1e-12, "adaptive": True})
    # hand any leftover budget to a restart from the incumbent
    if best[1] is not None and count[0] < budget:
        optimize.minimize(neg_f, _from_box(best[1], boxes), method="Nelder-Mead",
                          options={"maxfev": budget - count[0], "xatol": 1e-10, "fatol": 1e-14,
                                   "adaptive": True})
    if best[1] is None:
        raise RuntimeError("no feasible protocol found")
    proto = fam.protocol(best[1], params)
    m = cycle_metrics(proto, params, substeps=substeps)
    return BaselineResult(proto, m, figure_of_merit(m, weights, norm), fam.name, count[0])
