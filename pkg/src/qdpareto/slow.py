"""Slow-driving (low-dissipation) analytics for finite-time Carnot cycles.

The cycle is: cold isotherm from population ``p_a`` to ``p_b``, wait,
iso-population quench to the hot bath, hot isotherm back to ``p_a``, wait,
iso-population quench back. Weights here follow the convention
``G = a P - (b/2) dP - c Sigma`` with the normalization folded in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from .engine import EngineParams, ExtendedState, Protocol, Segment, propagate_segment
from .limit_cycle import solve_limit_cycle
from .limit_cycle import CycleMetrics, Normalization, Weights, metrics_from_rates

LN2_OVER_PI = math.log(2) / math.pi
LOG_FRAC_MIN = 14.0  # decades of p_b / p_a searched by optimize_endpoints


class IdleOptimal(ValueError):
    """The figure of merit cannot be made positive: doing nothing is optimal."""


@dataclass(frozen=True)
class SlowCycle:
    p_a: float
    p_b: float
    tau_hot: float
    tau_cold: float
    tau_wait: float = 0.0
    r: float = 2.0

    @property
    def period(self) -> float:
        return self.tau_hot + self.tau_cold + 2 * self.tau_wait


def binary_entropy(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0) - np.where(p < 1, (1 - p) * np.log1p(-p), 0.0)
    return float(h) if h.ndim == 0 else h


def reduced_gap(p):
    """``beta * gap`` giving excited population ``p``."""
    return np.log((1 - p) / p)


def heat_capacity(p):
    """Two-level heat capacity ``x^2 p (1-p)`` at the point with population ``p``."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where((p > 0) & (p < 1), reduced_gap(np.clip(p, 1e-300, 1)) ** 2 * p * (1 - p), 0.0)
    return float(c) if c.ndim == 0 else c


def thermo_length(p_a, p_b):
    """Squared thermodynamic length between two populations."""
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    if np.any((p_a <= 0) | (p_a >= 1) | (p_b <= 0) | (p_b >= 1)):
        raise ValueError("populations must lie in (0, 1)")
    cos = np.sqrt(p_a * p_b) + np.sqrt((1 - p_a) * (1 - p_b))
    out = 4 * np.arccos(np.clip(cos, -1.0, 1.0)) ** 2
    return float(out) if out.ndim == 0 else out


def _tuple(weights):
    return weights.as_tuple() if isinstance(weights, Weights) else tuple(weights)


def weights_from_simplex(weights: Weights, norm: Normalization) -> tuple[float, float, float]:
    """Simplex weights of the normalized objective in the ``G`` convention."""
    return (weights.a / norm.p_max, 2 * weights.b / norm.dp_at_pmax, weights.c / norm.sigma_at_pmax)


def _deltas(params: EngineParams, a, b, c):
    th, tc = params.t_hot, params.t_cold
    return math.sqrt(a * th + b * th**2 + c), math.sqrt(a * tc + b * tc**2 + c)


def amplitude(p_a, p_b, params: EngineParams, weights) -> float:
    """``A = a dS - (b/2) dT (C_A + C_B)``."""
    a, b, _ = _tuple(weights)
    dT = params.t_hot - params.t_cold
    dS = binary_entropy(p_a) - binary_entropy(p_b)
    return a * dS - 0.5 * b * dT * (heat_capacity(p_a) + heat_capacity(p_b))


def slow_rates(cycle: SlowCycle, params: EngineParams) -> tuple[float, float, float, float]:
    """First-order ``(P, dP, Sigma, Q_hot rate)`` of a slow Carnot cycle."""
    th, tc = params.t_hot, params.t_cold
    dT = th - tc
    sigma = thermo_length(cycle.p_a, cycle.p_b) / params.gamma
    dS = binary_entropy(cycle.p_a) - binary_entropy(cycle.p_b)
    C = heat_capacity(cycle.p_a) + heat_capacity(cycle.p_b)
    tau = cycle.period
    P = (dT * dS - sigma * (th / cycle.tau_hot + tc / cycle.tau_cold)) / tau
    dP = (dT**2 * C + 2 * sigma * (th**2 / cycle.tau_hot + tc**2 / cycle.tau_cold)) / tau
    S = sigma * (1 / cycle.tau_hot + 1 / cycle.tau_cold) / tau
    q_hot = (th * dS - th * sigma / cycle.tau_hot) / tau
    return P, dP, S, q_hot


def slow_objectives(cycle: SlowCycle, params: EngineParams, weights) -> tuple[float, CycleMetrics]:
    """Figure of merit ``G`` and first-order metrics of a slow cycle."""
    a, b, c = _tuple(weights)
    P, dP, S, q_hot = slow_rates(cycle, params)
    G = a * P - 0.5 * b * dP - c * S
    return G, metrics_from_rates(P, dP, S, cycle.period, params, heat_hot_rate=q_hot)


def idle_preferred(p_a, p_b, params: EngineParams, weights) -> bool:
    return amplitude(p_a, p_b, params, weights) <= 0


def optimal_times(p_a: float, p_b: float, params: EngineParams, weights, r: float = 2.0) -> SlowCycle:
    """Stroke durations maximizing ``G`` for fixed endpoints."""
    a, b, c = _tuple(weights)
    A = amplitude(p_a, p_b, params, weights)
    if A <= 0:
        raise IdleOptimal(f"A = {A} <= 0: idle cycle is optimal")
    dT = params.t_hot - params.t_cold
    dh, dc = _deltas(params, a, b, c)
    sigma = thermo_length(p_a, p_b) / params.gamma
    tau_h = 2 * (dh + dc) * dh * sigma / (dT * A)
    tau_c = 2 * (dh + dc) * dc * sigma / (dT * A)
    ds = 0.5 * r * A / (r * A + (dh + dc) ** 2 * sigma)
    tau = (tau_h + tau_c) / (1 - 2 * ds)
    return SlowCycle(p_a, p_b, tau_h, tau_c, tau * ds, r)


def endpoint_objective(p_a, p_b, params: EngineParams, weights, r: float = 2.0):
    """``G`` at optimal times as a function of the endpoints (vectorized)."""
    a, b, c = _tuple(weights)
    dT = params.t_hot - params.t_cold
    dh, dc = _deltas(params, a, b, c)
    A = amplitude(p_a, p_b, params, weights)
    L2 = thermo_length(p_a, p_b) / params.gamma
    G = 0.25 * A**2 * dT**2 / (r * A + (dh + dc) ** 2 * L2)
    return np.where(A > 0, G, 0.0)


def optimize_endpoints(params: EngineParams, weights, r: float = 2.0, seed: int = 0,
                       n_starts: int = 8, grid: int = 60) -> tuple[SlowCycle, float]:
    """Maximize ``G`` over ``0 < p_b < p_a <= 1/2``.

    The search runs over ``p_a`` and ``log10(p_b / p_a)`` in ``[-LOG_FRAC_MIN, 0]``,
    since at large fluctuation weight the optimal ``p_b`` is many decades
    small. Raises :class:`IdleOptimal` when no feasible endpoints give ``G > 0``.
    """
    if _tuple(weights)[0] <= 0:
        raise IdleOptimal("a = 0: idle cycle is optimal")
    lo, hi = 1e-9, 0.5

    def to_p(v):
        pa = lo + (hi - lo) * float(expit(v[0]))
        return pa, pa * 10.0 ** (-LOG_FRAC_MIN * float(expit(v[1])))

    def to_v(pa, pb):
        pa = min(max(pa, 2 * lo), hi - 1e-12)
        q = min(max(-math.log10(pb / pa) / LOG_FRAC_MIN, 1e-9), 1 - 1e-9)
        return [float(logit((pa - lo) / (hi - lo))), float(logit(q))]

    def neg(v):
        pa, pb = to_p(v)
        if not 0 < pb < pa:
            return 0.0
        return -float(endpoint_objective(pa, pb, params, weights, r))

    PA, LF = np.meshgrid(np.linspace(0.5 / grid, 0.5, grid),
                         np.linspace(-LOG_FRAC_MIN, 0, grid + 1)[:-1], indexing="ij")
    vals = endpoint_objective(PA, PA * 10.0**LF, params, weights, r)
    order = np.argsort(vals, axis=None)[::-1]
    rng = np.random.default_rng(seed)
    starts = [to_v(PA.flat[i], PA.flat[i] * 10.0 ** LF.flat[i]) for i in order[: n_starts // 2]]
    starts += [rng.normal(0.0, 2.0, 2) for _ in range(n_starts - len(starts))]
    best, best_g = None, 0.0
    for x0 in starts:
        res = optimize.minimize(neg, x0, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000})
        if -res.fun > best_g:
            best, best_g = to_p(res.x), -res.fun
    if best is None:
        raise IdleOptimal("no endpoints with positive G")
    return optimal_times(best[0], best[1], params, weights, r), float(best_g)


def geodesic_populations(p_start: float, p_end: float, n: int) -> np.ndarray:
    """``n+1`` populations at equal thermodynamic-length spacing."""
    t0, t1 = math.asin(math.sqrt(p_start)), math.asin(math.sqrt(p_end))
    return np.sin(np.linspace(t0, t1, n + 1)) ** 2


def synthesize_slow_protocol(cycle: SlowCycle, params: EngineParams, n_segments: int = 32) -> Protocol:
    """Piecewise-linear protocol following the thermodynamic geodesic on both isotherms.

    The iso-population quenches rescale the gap by ``T_h/T_c``; control
    bounds are not enforced here.
    """
    if n_segments < 8:
        raise ValueError("n_segments must be at least 8")
    bc, bh = params.beta_cold, params.beta_hot
    ps = geodesic_populations(cycle.p_a, cycle.p_b, n_segments)
    u_cold = reduced_gap(ps) / (bc * params.e0)
    u_hot = (reduced_gap(ps) / (bh * params.e0))[::-1]
    segs = []
    dt_c, dt_h = cycle.tau_cold / n_segments, cycle.tau_hot / n_segments
    for k in range(n_segments):
        segs.append(Segment(dt_c, float(u_cold[k]), float(u_cold[k + 1]), bc))
    if cycle.tau_wait > 0:
        segs.append(Segment(cycle.tau_wait, float(u_cold[-1]), float(u_cold[-1]), bc))
    for k in range(n_segments):
        segs.append(Segment(dt_h, float(u_hot[k]), float(u_hot[k + 1]), bh))
    if cycle.tau_wait > 0:
        segs.append(Segment(cycle.tau_wait, float(u_hot[-1]), float(u_hot[-1]), bh))
    return Protocol(tuple(segs))


def isotherm_fluctuations(cycle: SlowCycle, params: EngineParams, n_segments: int = 32) -> dict:
    """Work variance and dissipated work of each isotherm of the synthesized protocol.

    Each isotherm is started from the limit-cycle population with the
    covariance reset to zero, so the accumulated fluctuation is the variance of
    the work done along that isotherm alone. The heat includes the waiting
    segment that follows, where the lag behind equilibrium relaxes. Returns
    ``{"hot": (var, 2 T W_diss), "cold": (...)}``.
    """
    proto = synthesize_slow_protocol(cycle, params, n_segments)
    segs = proto.segments
    n_cold = n_segments + (1 if cycle.tau_wait > 0 else 0)
    start = solve_limit_cycle(proto, params)
    out = {}
    p = start.p
    for name, block, temp, ds in (
        ("cold", segs[:n_segments], params.t_cold, binary_entropy(cycle.p_b) - binary_entropy(cycle.p_a)),
        ("hot", segs[n_cold:n_cold + n_segments], params.t_hot, binary_entropy(cycle.p_a) - binary_entropy(cycle.p_b)),
    ):
        state = ExtendedState(p, 0.0)
        var = heat = 0.0
        for seg in block:
            state, acc = propagate_segment(state, params, seg)
            var += float(acc.fluct)
            heat += float(acc.heat)
        # the waiting segment releases the lag heat; it does no work
        if cycle.tau_wait > 0:
            state, acc = propagate_segment(state, params, segs[n_segments if name == "cold" else -1])
            heat += float(acc.heat)
        out[name] = (var, 2 * temp * (temp * ds - heat))
        p = float(state.p)
    return out


# -- low-power asymptotics -------------------------------------------------------------

def low_power_asymptotics(params: EngineParams, b: float, c: float, alpha_grid) -> dict:
    """Leading-order objectives and TUR ratio curves for ``alpha = b dT / a >> 1``.

    Returns arrays keyed ``alpha, p_a, P, dP, Sigma, xi_P, xi_dP, xi_Sigma``;
    the three ``xi_*`` entries are the closed forms expressed through the
    corresponding objective.
    """
    alpha = np.asarray(alpha_grid, dtype=float)
    if np.any(alpha < 10):
        raise ValueError("asymptotics need alpha >= 10")
    th, tc = params.t_hot, params.t_cold
    dT = th - tc
    k = c / b
    sh, sc = math.sqrt(k + th**2), math.sqrt(k + tc**2)
    l2 = LN2_OVER_PI**2
    inv = dT / alpha  # a / b: the objectives scale with the weight ratio, not with alpha itself
    P = 2 * inv * l2 * dT**2 / (sh + sc) ** 2
    dP = 2 * inv**2 * l2 * dT**2 / (sh + sc) ** 3 * (th**2 / sh + tc**2 / sc)
    S = l2 * inv**2 / (sh * sc) * dT**2 / (sh + sc) ** 2
    xi_P = 16 * l2**2 * dT**4 / P**2 / (sh + sc) ** 3 * (sh**2 * sc**2) / (tc**2 * sh + th**2 * sc)
    xi_S = 4 * l2 * dT**2 / S / (sh + sc) * (sh * sc) / (tc**2 * sh + th**2 * sc)
    xi_dP = 8 * l2 * dT**2 / dP * (sh * sc) / (sh + sc) ** 2
    return {"alpha": alpha, "p_a": 0.5 - LN2_OVER_PI / alpha, "P": P, "dP": dP, "Sigma": S,
            "xi_P": xi_P, "xi_dP": xi_dP, "xi_Sigma": xi_S}


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
