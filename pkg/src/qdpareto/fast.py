"""Fast-driving analytics (period much shorter than ``1/gamma``).

Includes the covariance formulas for arbitrary protocols, closed forms for
Otto cycles, the small temperature-difference optimum, the power/fluctuation
border and the steady-state engine mapping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .engine import EngineParams, Protocol, Segment, fermi, otto_protocol
from .limit_cycle import CycleMetrics, Normalization, Weights, metrics_from_rates


@dataclass(frozen=True)
class OttoParams:
    eps_hot: float
    eps_cold: float
    theta_hot: float = 0.5

    @property
    def theta_cold(self) -> float:
        return 1.0 - self.theta_hot

    def is_engine(self, params: EngineParams) -> bool:
        xh, xc = params.beta_hot * self.eps_hot, params.beta_cold * self.eps_cold
        return 0 <= xh <= xc <= xh * (1 + params.dT)

    def protocol(self, params: EngineParams, tau: float) -> Protocol:
        return otto_protocol(params, self.eps_hot, self.eps_cold, tau, self.theta_hot)


def otto_rates(eps_hot, eps_cold, theta_hot, params: EngineParams):
    """Vectorized ``(P, dP, Sigma)`` of fast Otto cycles."""
    th = np.asarray(theta_hot, dtype=float)
    tc = 1.0 - th
    fh = fermi(params.beta_hot * np.asarray(eps_hot, dtype=float))
    fc = fermi(params.beta_cold * np.asarray(eps_cold, dtype=float))
    fbar = th * fh + tc * fc
    de = np.asarray(eps_hot) - np.asarray(eps_cold)
    g = params.gamma * th * tc
    P = g * de * (fh - fc)
    dP = 2 * g * de**2 * (fbar * (1 - fbar) + ((fc + fh) / 2 - fbar) * (1 - 2 * fbar))
    S = -g * (params.beta_hot * np.asarray(eps_hot) - params.beta_cold * np.asarray(eps_cold)) * (fh - fc)
    return P, dP, S


def fast_otto_metrics(otto: OttoParams, params: EngineParams) -> CycleMetrics:
    P, dP, S = (float(v) for v in otto_rates(otto.eps_hot, otto.eps_cold, otto.theta_hot, params))
    m = metrics_from_rates(P, dP, S, 0.0, params)
    if m.is_engine:
        # heat-ratio efficiency of the Otto cycle; avoids the 0/0 of the entropy relation
        m = CycleMetrics(P, dP, S, 1.0 - otto.eps_cold / otto.eps_hot, m.tur_ratio, 0.0)
    return m


# -- covariance formulas for arbitrary protocols ---------------------------------------

def _quadrature(protocol: Protocol, params: EngineParams, n_nodes: int):
    """Nodes/weights on [0, tau] with diagonal H, Gibbs state and beta at each node."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    eps, beta, wts = [], [], []
    for seg in protocol.segments:
        if seg.duration == 0:
            continue
        if seg.is_constant:
            eps.append([seg.u_start * params.e0])
            beta.append([seg.beta])
            wts.append([seg.duration])
        else:
            s = 0.5 * (x + 1.0)
            eps.append(params.e0 * (seg.u_start + (seg.u_end - seg.u_start) * s))
            beta.append(np.full(n_nodes, seg.beta))
            wts.append(0.5 * w * seg.duration)
    eps = np.concatenate(eps)
    beta = np.concatenate(beta)
    wts = np.concatenate(wts) / protocol.period
    H = np.stack([eps / 2, -eps / 2], axis=1)
    pe = fermi(beta * eps)
    pi = np.stack([pe, 1 - pe], axis=1)
    return H, pi, beta, wts


def fast_driving_covariance(protocol: Protocol, params: EngineParams, n_nodes: int = 64) -> CycleMetrics:
    """Leading-order metrics for ``gamma * tau -> 0`` from time covariances.

    Operators are stored as their diagonals so traces are plain sums.
    """
    H, pi, beta, w = _quadrature(protocol, params, n_nodes)

    def avg(a):
        return np.tensordot(w, a, axes=(0, 0))

    rho0 = avg(pi)
    Hm = avg(H)
    dH = H - Hm
    dpi = pi - rho0
    tr = lambda a, b: np.sum(a * b, axis=-1)  # noqa: E731
    g = params.gamma
    P = g * avg(tr(dpi, dH))
    S = -g * avg(beta * tr(pi - rho0, H))
    dP = 2 * g * (
        avg(tr(rho0, H**2) - tr(rho0, H) ** 2)
        - (tr(rho0, Hm**2) - tr(rho0, Hm) ** 2)
        + 0.5 * avg(tr(dH**2, dpi))
        - avg(tr(dH, dpi) * tr(dH, rho0))
    )
    return metrics_from_rates(float(P), float(dP), float(S), protocol.period, params)


# -- small temperature difference ------------------------------------------------------

def g_func(x):
    return x**2 / (2 * (1 + np.cosh(x)))


def solve_xmax(tol: float = 1e-12) -> float:
    """Positive root of ``x tanh(x/2) = 2`` (the maximizer of ``g``) by bisection."""
    return optimize.bisect(lambda x: x * math.tanh(x / 2) - 2.0, 1.0, 4.0, xtol=tol, rtol=4 * np.finfo(float).eps)


X_MAX = solve_xmax()
G_MAX = float(g_func(X_MAX))


@dataclass(frozen=True)
class SmallDTOptimum:
    """Leading-order optimum in ``dT`` of fast Otto cycles.

    Metrics are in the reduced units ``P/(gamma T)``, ``dP/(gamma T^2)``,
    ``Sigma/gamma`` with ``T = 1/beta_cold``.
    """

    delta_xc: float
    dT: float
    idle: bool
    theta: float = 0.5
    x_hot: float = X_MAX
    G: float = 0.0
    power: float = 0.0
    fluct: float = 0.0
    entropy: float = 0.0
    eta_ratio: float = math.nan
    case2_roots: tuple = field(default_factory=tuple)

    @property
    def tur_ratio(self) -> float:
        return 2 * self.power**2 / (self.entropy * self.fluct) if self.entropy * self.fluct > 0 else math.nan


def small_dt_reduced_metrics(delta_xc, dT, theta=0.5, x_hot=X_MAX):
    """``(P/(gamma T), dP/(gamma T^2), Sigma/gamma)`` to leading order in dT."""
    pref = theta * (1 - theta) * g_func(x_hot)
    return (pref * delta_xc * (dT - delta_xc), 2 * pref * (dT - delta_xc) ** 2, pref * delta_xc**2)


def small_dt_optimum(weights, dT: float) -> SmallDTOptimum:
    """Optimum of ``a P/(gamma T) - b dP/(gamma T^2) - c Sigma/gamma``.

    ``weights`` is a :class:`Weights` or a plain ``(a, b, c)`` triple in this
    reduced normalization (they need not sum to one).
    """
    a, b, c = weights.as_tuple() if isinstance(weights, Weights) else weights
    den = 2 * a + 4 * b + 2 * c
    disc = a * a - 8 * b * c
    roots = ()
    if disc >= 0:
        r = math.sqrt(disc)
        roots = ((a + 4 * b - r) / den * dT, (a + 4 * b + r) / den * dT)
    dx = (a + 4 * b) / den * dT
    if disc < 0:
        return SmallDTOptimum(delta_xc=dx, dT=dT, idle=True, case2_roots=roots)
    s = a + 2 * b + c
    k = G_MAX * dT**2
    return SmallDTOptimum(
        delta_xc=dx, dT=dT, idle=False,
        G=k * disc / (16 * s),
        power=k * (a + 4 * b) * (a + 2 * c) / (16 * s**2),
        fluct=k * (a + 2 * c) ** 2 / (8 * s**2),
        entropy=k * (a + 4 * b) ** 2 / (16 * s**2),
        eta_ratio=(a + 2 * c) / den,
        case2_roots=roots,
    )


def small_dt_scales(dT: float) -> tuple[float, float, float]:
    """Reduced max-power metrics ``(P, dP, Sigma)``, used as normalization."""
    k = G_MAX * dT**2
    return k / 16, k / 8, k / 16


def weights_to_reduced(weights: Weights, dT: float) -> tuple[float, float, float]:
    """Map simplex weights of the max-power-normalized objective to the
    reduced normalization (same optimizer, rescaled objective)."""
    la, lb, lc = small_dt_scales(dT)
    a0, b0, c0 = weights.a / la, weights.b / lb, weights.c / lc
    s = a0 + b0 + c0
    return a0 / s, b0 / s, c0 / s


def reduced_to_weights(reduced, dT: float) -> Weights:
    la, lb, lc = small_dt_scales(dT)
    a0, b0, c0 = reduced
    return Weights.normalized(la * a0, lb * b0, lc * c0)


def pareto_border(dp_ratio):
    """Maximal ``P/P_max`` reachable at fluctuation ratio ``dP/dP(P_max)``."""
    r = np.asarray(dp_ratio, dtype=float)
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("fluctuation ratio must lie in [0, 1]")
    out = 2 * np.sqrt(r) - r
    return float(out) if out.ndim == 0 else out


def zero_f_boundary(c):
    """Weight ``a`` below which optimized fast-Otto cycles give ``F = 0`` (``b = 1-a-c``).

    Obtained from ``a^2 = 4 c (1 - a - c)``, the vanishing discriminant after
    converting to max-power normalization; the positive root is kept.
    """
    c = np.asarray(c, dtype=float)
    if np.any(c < 0) or np.any(c > 1):
        raise ValueError("c must lie in [0, 1]")
    out = 2 * (np.sqrt(c) - c)
    return float(out) if out.ndim == 0 else out


# -- numerical optimization of exact fast-Otto formulas --------------------------------

def _objective(weights: Weights, norm: Normalization | None):
    if norm is None:
        sa, sb, sc = 1.0, 1.0, 1.0
    else:
        sa, sb, sc = norm.p_max, norm.dp_at_pmax, norm.sigma_at_pmax
    return weights.a / sa, weights.b / sb, weights.c / sc


def optimize_fast_otto(weights: Weights, norm: Normalization | None, params: EngineParams,
                       seed: int = 0, n_starts: int = 8, grid: int = 41) -> tuple[OttoParams, CycleMetrics, float]:
    """Maximize the figure of merit over fast Otto cycles within the control bounds.

    Returns the best cycle, its metrics and its figure of merit. With
    ``norm=None`` the objective is the unnormalized ``aP - b dP - c Sigma``.
    The idle cycle (``F = 0``) is always a candidate.
    """
    wa, wb, wc = _objective(weights, norm)
    lo, hi = params.u_min * params.e0, params.u_max * params.e0

    def F(eh, ec, th):
        P, dP, S = otto_rates(eh, ec, th, params)
        return wa * P - wb * dP - wc * S

    # coarse grid picks the basins, Nelder-Mead refines
    e = np.linspace(lo, hi, grid)
    th = np.linspace(0.05, 0.95, 19)
    EH, EC, TH = np.meshgrid(e, e, th, indexing="ij")
    vals = F(EH, EC, TH)
    order = np.argsort(vals, axis=None)[::-1]
    rng = np.random.default_rng(seed)
    starts = [np.array([EH.flat[i], EC.flat[i], TH.flat[i]]) for i in order[: n_starts // 2]]
    starts += [np.array([rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(0.05, 0.95)])
               for _ in range(n_starts - len(starts))]
    bounds = [(lo, hi), (lo, hi), (1e-6, 1 - 1e-6)]
    best_x, best_f = None, 0.0
    for x0 in starts:
        res = optimize.minimize(lambda v: -F(*v), x0, method="Nelder-Mead", bounds=bounds,
                                options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 20000, "maxfev": 40000})
        if -res.fun > best_f:
            best_x, best_f = res.x, float(-res.fun)
    if best_x is None:
        mid = 0.5 * (lo + hi)
        otto = OttoParams(mid, mid, 0.5)
        return otto, fast_otto_metrics(otto, params), 0.0
    otto = OttoParams(float(best_x[0]), float(best_x[1]), float(best_x[2]))
    return otto, fast_otto_metrics(otto, params), best_f


def maxpower_relation_check(params: EngineParams) -> dict:
    """Compare ``dP(P_max)`` with ``2 T P_max``.

    Returns the residual of the leading-order closed forms (zero by
    construction) and of the exact fast-Otto maximization, whose deviation is
    expected to be ``O(dT)``.
    """
    T = params.t_cold
    P0, dP0, _ = small_dt_scales(params.dT)
    symbolic = dP0 / (2 * P0) - 1.0
    otto, m, _ = optimize_fast_otto(Weights(1.0, 0.0, 0.0), None, params)
    exact = m.fluct / (2 * T * m.power) - 1.0
    return {"dT": params.dT, "symbolic_residual": symbolic, "exact_residual": exact,
            "p_max": m.power, "dp_at_pmax": m.fluct, "otto": otto}


# -- steady-state engine mapping -------------------------------------------------------

def _fermi_plus(x):
    """Population convention of the mapping table, ``1/(1+e^{-x})``."""
    return fermi(-x)


def sshe_column(eps: float, mu1: float, mu2: float, beta1: float, beta2: float,
                g1: float, g2: float) -> dict:
    f1 = _fermi_plus(beta1 * (eps - mu1))
    f2 = _fermi_plus(beta2 * (eps - mu2))
    gr = g1 * g2 / (g1 + g2)
    fbar = (g1 * f1 + g2 * f2) / (g1 + g2)
    return {
        "p": fbar,
        "P": gr * (f1 - f2) * (mu1 - mu2),
        "eta": 1 - (eps - mu1) / (eps - mu2),
        "dP": 2 * gr * (mu1 - mu2) ** 2 * (fbar * (1 - fbar) + ((f1 + f2) / 2 - fbar) * (1 - 2 * fbar)),
        "dP_fplus": _dp_fplus(gr, mu1 - mu2, f1, f2, fbar),
        "dP_sshe": _dp_standard(g1, g2, mu1 - mu2, f1, f2),
    }


def _dp_fplus(gr, dmu, f1, f2, fbar):
    fp = (f1 + f2) / 2
    return 2 * gr * dmu**2 * (fp * (1 - fp) + (fbar - fp) ** 2)


def _dp_standard(g1, g2, dmu, f1, f2):
    return (g1 * g2 / (g1 + g2) * dmu**2 * (f1 * (1 - f2) + f2 * (1 - f1))
            - 2 * g1**2 * g2**2 / (g1 + g2) ** 3 * dmu**2 * (f1 - f2) ** 2)


def otto_column(eps1: float, eps2: float, theta1: float, beta1: float, beta2: float,
                g1: float, g2: float) -> dict:
    theta2 = 1 - theta1
    f1 = _fermi_plus(beta1 * eps1)
    f2 = _fermi_plus(beta2 * eps2)
    r1, r2 = theta1 * g1, theta2 * g2
    gr = r1 * r2 / (r1 + r2)
    fbar = (r1 * f1 + r2 * f2) / (r1 + r2)
    return {
        "p": fbar,
        "P": gr * (f1 - f2) * (eps2 - eps1),
        "eta": 1 - eps1 / eps2,
        "dP": 2 * gr * (eps1 - eps2) ** 2 * (fbar * (1 - fbar) + ((f1 + f2) / 2 - fbar) * (1 - 2 * fbar)),
        "dP_fplus": _dp_fplus(gr, eps1 - eps2, f1, f2, fbar),
        "dP_sshe": _dp_standard(r1, r2, eps1 - eps2, f1, f2),
    }


def sshe_mapping_check(otto: dict, rates: tuple[float, float], betas: tuple[float, float],
                       eps: float = 0.0, tol: float = 1e-12) -> dict:
    """Check the steady-state / fast-Otto correspondence row by row.

    ``otto`` holds ``eps1, eps2, theta1``; the steady-state engine is built
    with rates ``theta_i gamma_i`` and chemical potentials ``mu_i = eps - eps_i``.
    Returns ``{"ok": bool, "rows": {...}, "mismatch": [...]}``; every row is
    compared with tolerance ``tol`` relative to its magnitude, and the three
    equivalent forms of the fluctuations are compared to each other.
    """
    e1, e2, th = otto["eps1"], otto["eps2"], otto["theta1"]
    g1, g2 = rates
    b1, b2 = betas
    left = sshe_column(eps, eps - e1, eps - e2, b1, b2, th * g1, (1 - th) * g2)
    right = otto_column(e1, e2, th, b1, b2, g1, g2)
    rows, bad = {}, []
    for k in left:
        diff = abs(left[k] - right[k])
        rows[k] = (left[k], right[k])
        if diff > tol * max(1.0, abs(left[k])):
            bad.append(k)
    for col in (left, right):
        for k in ("dP_fplus", "dP_sshe"):
            if abs(col[k] - col["dP"]) > tol * max(1.0, abs(col["dP"])):
                bad.append(k + "_form")
    return {"ok": not bad, "rows": rows, "mismatch": bad}
