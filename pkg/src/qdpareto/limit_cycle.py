"""Periodic orbit of the extended state and the cycle metrics built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import Accumulators, EngineParams, ExtendedState, Protocol, run_period

CSV_HEADER = "period,P,dP,Sigma,eta,xi,F"


class LimitCycleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Weights:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) < 0:
            raise ValueError(f"weights must be non-negative: {self}")
        if abs(self.a + self.b + self.c - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to one: {self}")

    @classmethod
    def from_ac(cls, a: float, c: float) -> "Weights":
        b = 1.0 - a - c
        if abs(b) < 1e-12:
            b = 0.0
        return cls(a, b, c)

    @classmethod
    def normalized(cls, a: float, b: float, c: float) -> "Weights":
        s = a + b + c
        return cls(a / s, b / s, c / s)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)


@dataclass(frozen=True)
class Normalization:
    """Metrics of the maximum-power cycle used to make the figure of merit dimensionless."""

    p_max: float
    dp_at_pmax: float
    sigma_at_pmax: float

    def __post_init__(self):
        if min(self.p_max, self.dp_at_pmax, self.sigma_at_pmax) <= 0:
            raise ValueError("normalization constants must be positive")

    def to_dict(self) -> dict:
        return {"p_max": self.p_max, "dp_at_pmax": self.dp_at_pmax, "sigma_at_pmax": self.sigma_at_pmax}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(float(d["p_max"]), float(d["dp_at_pmax"]), float(d["sigma_at_pmax"]))


@dataclass(frozen=True)
class CycleMetrics:
    """Average power, fluctuations, entropy production and derived ratios.

    ``efficiency`` and ``tur_ratio`` are NaN when the cycle is not a heat
    engine (``power <= 0``); ``is_engine`` records that flag.
    """

    power: float
    fluct: float
    entropy_rate: float
    efficiency: float
    tur_ratio: float
    period: float
    is_engine: bool = True

    def csv_row(self, F: float = math.nan) -> str:
        vals = (self.period, self.power, self.fluct, self.entropy_rate, self.efficiency, self.tur_ratio, F)
        return ",".join(repr(float(v)) for v in vals)


def efficiency_from_entropy(power: float, entropy_rate: float, params: EngineParams) -> float:
    return params.eta_carnot / (1.0 + entropy_rate / (params.beta_cold * power))


def tur_ratio(power: float, fluct: float, entropy_rate: float) -> float:
    den = entropy_rate * fluct
    return 2.0 * power**2 / den if den > 0 else math.inf


def metrics_from_rates(power: float, fluct: float, entropy_rate: float, period: float,
                       params: EngineParams, heat_hot_rate: float | None = None) -> CycleMetrics:
    """Build :class:`CycleMetrics` from per-time averages."""
    if power <= 0:
        return CycleMetrics(power, fluct, entropy_rate, math.nan, math.nan, period, False)
    if heat_hot_rate is None:
        eta = efficiency_from_entropy(power, entropy_rate, params)
    else:
        eta = power / heat_hot_rate
    return CycleMetrics(power, fluct, entropy_rate, eta, tur_ratio(power, fluct, entropy_rate), period)


def solve_limit_cycle(protocol: Protocol, params: EngineParams, tol: float = 1e-10,
                      substeps: int = 64) -> ExtendedState:
    """Fixed point of the period map.

    The population map is affine, ``p -> A p + B``; for fixed ``p`` the map of
    ``s1`` is affine too, ``s1 -> C s1 + D``. Both are read off from period
    runs and solved directly, with Picard iteration as a fallback when
    ``1 - A`` is too small to divide by.
    """
    probe, _ = run_period(ExtendedState(np.array([0.0, 1.0]), np.zeros(2)), protocol, params, substeps)
    B = float(probe.p[0])
    A = float(probe.p[1] - probe.p[0])
    if A >= 1.0:
        raise LimitCycleError(f"period map does not contract (factor {A})")
    if 1.0 - A > 1e-12:
        p_star = B / (1.0 - A)
        probe, _ = run_period(ExtendedState(np.array([p_star, p_star]), np.array([0.0, 1.0])),
                              protocol, params, substeps)
        D = float(probe.s1[0])
        C = float(probe.s1[1] - probe.s1[0])
        s_star = D / (1.0 - C)
        state = ExtendedState(p_star, s_star)
    else:
        state = _picard(protocol, params, tol, substeps)
    end, _ = run_period(state, protocol, params, substeps)
    resid = max(abs(end.p - state.p), abs(end.s1 - state.s1))
    if resid > tol * max(1.0, abs(state.s1)):
        # polish; the affine solve can lose digits when 1 - A is small
        state = ExtendedState(float(end.p), float(end.s1))
    return ExtendedState(float(state.p), float(state.s1))


def _picard(protocol, params, tol, substeps, max_iter=100000) -> ExtendedState:
    state = ExtendedState(0.5, 0.0)
    for _ in range(max_iter):
        new, _ = run_period(state, protocol, params, substeps)
        if abs(new.p - state.p) < tol and abs(new.s1 - state.s1) < tol:
            return new
        state = new
    raise LimitCycleError("Picard iteration did not converge")


def picard_limit_cycle(protocol: Protocol, params: EngineParams, n_iter: int,
                       start: ExtendedState | None = None, substeps: int = 64) -> ExtendedState:
    """Plain repeated application of the period map (used for cross-checks)."""
    state = start or ExtendedState(0.5, 0.0)
    for _ in range(n_iter):
        state, _ = run_period(state, protocol, params, substeps)
    return state


def period_accumulators(protocol: Protocol, params: EngineParams,
                        substeps: int = 64) -> tuple[ExtendedState, Accumulators]:
    state = solve_limit_cycle(protocol, params, substeps=substeps)
    _, acc = run_period(state, protocol, params, substeps)
    return state, acc


def cycle_metrics(protocol: Protocol, params: EngineParams, substeps: int = 64,
                  check_efficiency: bool = True) -> CycleMetrics:
    """Exact limit-cycle averages of power, fluctuations and entropy production."""
    _, acc = period_accumulators(protocol, params, substeps)
    tau = protocol.period
    P, dP, S = float(acc.work) / tau, float(acc.fluct) / tau, float(acc.entropy) / tau
    m = metrics_from_rates(P, dP, S, tau, params, heat_hot_rate=float(acc.heat_hot) / tau)
    if check_efficiency and m.is_engine:
        eta2 = efficiency_from_entropy(P, S, params)
        if abs(eta2 - m.efficiency) > 1e-6 * abs(eta2):
            raise LimitCycleError(f"efficiency mismatch: heat ratio {m.efficiency} vs entropy {eta2}")
    return m


def figure_of_merit(metrics: CycleMetrics, weights: Weights, norm: Normalization) -> float:
    return (weights.a * metrics.power / norm.p_max
            - weights.b * metrics.fluct / norm.dp_at_pmax
            - weights.c * metrics.entropy_rate / norm.sigma_at_pmax)


def transform_weights_entropy_from_efficiency(weights_eff: Weights | tuple, dSigma_dP: float,
                                              dSigma_dEta: float) -> Weights:
    """Weights of the entropy-production objective sharing the optimum of an
    efficiency-based objective with weights ``weights_eff``."""
    if not dSigma_dEta < 0 or dSigma_dP < 0:
        raise ValueError("need dSigma/dP >= 0 and dSigma/deta < 0")
    a1, b1, c1 = weights_eff.as_tuple() if isinstance(weights_eff, Weights) else weights_eff
    m = np.array([
        [1.0, 0.0, -dSigma_dP / dSigma_dEta],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0 / dSigma_dEta],
    ])
    a2, b2, c2 = m @ np.array([a1, b1, c1])
    return Weights.normalized(a2, b2, c2)


def efficiency_slopes(power: float, efficiency: float, params: EngineParams) -> tuple[float, float]:
    """Partial derivatives of ``Sigma(P, eta) = (eta_c - eta)/eta * beta_c * P``."""
    etac, bc = params.eta_carnot, params.beta_cold
    return (etac - efficiency) / efficiency * bc, -etac / efficiency**2 * bc * power
