"""Two-level quantum-dot engine: parameters, protocols and exact propagation.

The dot Hamiltonian is ``H = u * e0 / 2 * sigma_z`` and the populations relax
towards the instantaneous Gibbs state at rate ``gamma``. Because every operator
is diagonal, the density matrix reduces to the excited population ``p`` and the
traceless fluctuation operator ``s = diag(s1, -s1)`` reduces to ``s1``.

All propagation functions accept scalars or numpy arrays for ``p``/``s1`` so
that several initial conditions can be pushed through a protocol at once.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

PROTOCOL_SCHEMA_VERSION = 1


class StepSizeError(RuntimeError):
    """Raised when ramp integration does not self-converge."""


@dataclass(frozen=True)
class EngineParams:
    """Physical configuration of the engine.

    Energies are in units of ``1/beta_cold`` and times in units of
    ``1/gamma`` unless overridden.
    """

    beta_hot: float = 1.0
    beta_cold: float = 2.0
    u_min: float = 0.2
    u_max: float = 1.1
    e0: float = 2.5
    gamma: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta_hot <= self.beta_cold:
            raise ValueError("need 0 < beta_hot <= beta_cold")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")
        if self.e0 <= 0 or self.gamma <= 0:
            raise ValueError("e0 and gamma must be positive")

    @property
    def t_hot(self) -> float:
        return 1.0 / self.beta_hot

    @property
    def t_cold(self) -> float:
        return 1.0 / self.beta_cold

    @property
    def eta_carnot(self) -> float:
        return 1.0 - self.beta_hot / self.beta_cold

    @property
    def dT(self) -> float:
        """Dimensionless temperature difference ``beta_c (1/beta_h - 1/beta_c)``."""
        return self.beta_cold / self.beta_hot - 1.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("beta_hot", "beta_cold", "u_min", "u_max", "e0", "gamma")}

    @classmethod
    def from_dict(cls, d: dict) -> "EngineParams":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class Segment:
    """Linear ramp of ``u`` from ``u_start`` to ``u_end`` at fixed ``beta``."""

    duration: float
    u_start: float
    u_end: float
    beta: float

    @property
    def is_constant(self) -> bool:
        return self.u_start == self.u_end

    def check(self, params: EngineParams, atol: float = 1e-12) -> None:
        if self.duration < 0:
            raise ValueError(f"negative duration {self.duration}")
        for u in (self.u_start, self.u_end):
            if not params.u_min - atol <= u <= params.u_max + atol:
                raise ValueError(f"control {u} outside [{params.u_min}, {params.u_max}]")
        if not params.beta_hot - atol <= self.beta <= params.beta_cold + atol:
            raise ValueError(f"beta {self.beta} outside [{params.beta_hot}, {params.beta_cold}]")


@dataclass(frozen=True)
class Protocol:
    """Periodic schedule of segments.

    Any jump of ``u`` between consecutive segments, including the wrap from the
    last segment back to the first, is an instantaneous quench.
    """

    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("protocol needs at least one segment")
        if self.period <= 0:
            raise ValueError("protocol period must be positive")

    @property
    def period(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def check(self, params: EngineParams) -> None:
        for s in self.segments:
            s.check(params)

    def scaled(self, factor: float) -> "Protocol":
        """Same shape with all durations multiplied by ``factor``."""
        return Protocol(tuple(Segment(s.duration * factor, s.u_start, s.u_end, s.beta) for s in self.segments))

    def to_dict(self) -> dict:
        return {
            "version": PROTOCOL_SCHEMA_VERSION,
            "segments": [
                {"duration": s.duration, "u_start": s.u_start, "u_end": s.u_end, "beta": s.beta}
                for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Protocol":
        version = d.get("version", PROTOCOL_SCHEMA_VERSION)
        if version != PROTOCOL_SCHEMA_VERSION:
            raise ValueError(f"unsupported protocol version {version}")
        segs = []
        for s in d["segments"]:
            u0 = float(s["u_start"])
            segs.append(Segment(float(s["duration"]), u0, float(s.get("u_end", u0)), float(s["beta"])))
        return cls(tuple(segs))

    def dumps(self) -> str:
        # repr-exact floats keep the round trip bit-stable
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "Protocol":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "Protocol":
        return cls.loads(Path(path).read_text())


def otto_protocol(params: EngineParams, eps_hot: float, eps_cold: float, tau: float,
                  theta_hot: float = 0.5) -> Protocol:
    """Two-stroke Otto cycle: hot stroke at gap ``eps_hot`` then cold stroke."""
    return Protocol((
        Segment(theta_hot * tau, eps_hot / params.e0, eps_hot / params.e0, params.beta_hot),
        Segment((1 - theta_hot) * tau, eps_cold / params.e0, eps_cold / params.e0, params.beta_cold),
    ))


def constant_protocol(params: EngineParams, u: float, beta: float, tau: float = 1.0) -> Protocol:
    return Protocol((Segment(tau, u, u, beta),))


@dataclass(frozen=True)
class ExtendedState:
    p: np.ndarray | float
    s1: np.ndarray | float = 0.0


@dataclass
class Accumulators:
    """Running thermodynamic totals over a stretch of the protocol.

    ``entropy`` is the integral of ``-beta dQ``; ``fluct`` integrates
    ``Tr[s dH/dt]``. ``heat_hot`` weights each heat increment by
    ``(beta_c - beta)/(beta_c - beta_h)``, which is the heat drawn from the hot
    bath whenever ``beta`` only takes its two extreme values.
    """

    work: np.ndarray | float = 0.0
    heat: np.ndarray | float = 0.0
    entropy: np.ndarray | float = 0.0
    fluct: np.ndarray | float = 0.0
    heat_hot: np.ndarray | float = 0.0

    def __add__(self, other: "Accumulators") -> "Accumulators":
        return Accumulators(
            self.work + other.work,
            self.heat + other.heat,
            self.entropy + other.entropy,
            self.fluct + other.fluct,
            self.heat_hot + other.heat_hot,
        )


def fermi(x):
    """Excited population ``1/(1+e^x)`` of a two-level system at ``x = beta * gap``."""
    return expit(-np.asarray(x, dtype=float)) if np.ndim(x) else float(expit(-x))


def gibbs_population(params: EngineParams, u, beta):
    return fermi(beta * params.e0 * u)


def _hot_weight(params: EngineParams, beta: float) -> float:
    if params.beta_cold == params.beta_hot:
        return 1.0
    return (params.beta_cold - beta) / (params.beta_cold - params.beta_hot)


def _check_population(p) -> None:
    if np.any(np.asarray(p) < -1e-12) or np.any(np.asarray(p) > 1 + 1e-12):
        raise FloatingPointError(f"population left [0, 1]: {p}")


def propagate_constant(state: ExtendedState, params: EngineParams, u: float, beta: float,
                       dt: float) -> tuple[ExtendedState, Accumulators]:
    """Exact relaxation at fixed control; no work is exchanged."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    pi = gibbs_population(params, u, beta)
    decay = np.exp(-params.gamma * dt)
    p = pi + (state.p - pi) * decay
    _check_population(p)
    eps = u * params.e0
    q = eps * (p - state.p)
    zero = 0.0 * q
    acc = Accumulators(work=zero, heat=q, entropy=-beta * q, fluct=zero,
                       heat_hot=_hot_weight(params, beta) * q)
    return ExtendedState(p, state.s1 * decay), acc


def apply_quench(state: ExtendedState, params: EngineParams, u_before: float, u_after: float,
                 beta: float | None = None) -> tuple[ExtendedState, Accumulators]:
    """Instantaneous gap change; populations are frozen.

    The fluctuation increment uses the midpoint value ``s1 + ds/2``, the limit
    of a linear ramp of vanishing width.
    """
    d_eps = (u_after - u_before) * params.e0
    p = state.p
    ds = 2.0 * d_eps * p * (1.0 - p)
    work = -d_eps * (p - 0.5)
    fluct = d_eps * (state.s1 + 0.5 * ds)
    zero = 0.0 * work
    return ExtendedState(p, state.s1 + ds), Accumulators(work=work, heat=zero, entropy=zero,
                                                         fluct=fluct, heat_hot=zero)


def _ramp_rhs(y, t, eps0, deps, pi_of_t, gamma):
    p, s1 = y[0], y[1]
    eps = eps0 + deps * t
    pi = pi_of_t(t)
    pdot = -gamma * (p - pi)
    return np.array([
        pdot,
        -gamma * s1 + 2.0 * deps * p * (1.0 - p),
        -deps * (p - 0.5),   # work output
        eps * pdot,          # heat in
        deps * s1,           # fluctuation integrand
    ])


def _rk4_ramp(state, params, u_start, u_end, beta, dt, n):
    eps0 = u_start * params.e0
    deps = (u_end - u_start) * params.e0 / dt
    bx = beta * params.e0

    def pi_of_t(t):
        return fermi(bx * (u_start + (u_end - u_start) * t / dt))

    p0 = np.asarray(state.p, dtype=float)
    s0 = np.asarray(state.s1, dtype=float)
    shape = np.broadcast(p0, s0).shape
    y = np.zeros((5,) + shape)
    y[0] = p0
    y[1] = s0
    h = dt / n
    g = params.gamma
    for k in range(n):
        t = k * h
        k1 = _ramp_rhs(y, t, eps0, deps, pi_of_t, g)
        k2 = _ramp_rhs(y + 0.5 * h * k1, t + 0.5 * h, eps0, deps, pi_of_t, g)
        k3 = _ramp_rhs(y + 0.5 * h * k2, t + 0.5 * h, eps0, deps, pi_of_t, g)
        k4 = _ramp_rhs(y + h * k3, t + h, eps0, deps, pi_of_t, g)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def propagate_ramp(state: ExtendedState, params: EngineParams, u_start: float, u_end: float,
                   beta: float, dt: float, substeps: int = 64, tol: float = 1e-8,
                   max_substeps: int = 8192) -> tuple[ExtendedState, Accumulators]:
    """Integrate a linear ramp of the control with fixed-step RK4.

    The result at ``substeps`` is compared against ``substeps // 2``; while
    they disagree by more than ``tol`` (relative to the ramp's natural energy
    scale) the step count is doubled. ``StepSizeError`` is raised once
    ``max_substeps`` is exceeded.
    """
    if dt <= 0:
        raise ValueError("ramp duration must be positive")
    if u_start == u_end:
        return propagate_constant(state, params, u_start, beta, dt)
    eps_scale = params.e0 * max(abs(u_start), abs(u_end))
    scale = max(eps_scale, eps_scale**2, 1e-300)
    n = max(2, int(substeps))
    coarse = _rk4_ramp(state, params, u_start, u_end, beta, dt, n // 2)
    while True:
        fine = _rk4_ramp(state, params, u_start, u_end, beta, dt, n)
        err = np.max(np.abs(fine[2:] - coarse[2:]) / np.maximum(np.abs(fine[2:]), scale))
        if err <= tol:
            break
        if 2 * n > max_substeps:
            raise StepSizeError(f"ramp did not converge: rel. change {err:.3g} at {n} substeps")
        coarse, n = fine, 2 * n
    p, s1, work, heat, fluct = fine
    _check_population(p)
    acc = Accumulators(work=work, heat=heat, entropy=-beta * heat, fluct=fluct,
                       heat_hot=_hot_weight(params, beta) * heat)
    if np.ndim(p) == 0:
        p, s1 = float(p), float(s1)
        acc = Accumulators(*(float(v) for v in (work, heat, -beta * heat, fluct, acc.heat_hot)))
    return ExtendedState(p, s1), acc


def propagate_segment(state: ExtendedState, params: EngineParams, seg: Segment,
                      substeps: int = 64, tol: float = 1e-8) -> tuple[ExtendedState, Accumulators]:
    if seg.duration == 0:
        return state, Accumulators()
    if seg.is_constant:
        return propagate_constant(state, params, seg.u_start, seg.beta, seg.duration)
    return propagate_ramp(state, params, seg.u_start, seg.u_end, seg.beta, seg.duration,
                          substeps=substeps, tol=tol)


def run_period(state: ExtendedState, protocol: Protocol, params: EngineParams,
               substeps: int = 64, tol: float = 1e-8) -> tuple[ExtendedState, Accumulators]:
    """Advance the extended state through one full period.

    The period starts just before the wrap-around quench from the last
    segment's final control to the first segment's initial control.
    """
    total = Accumulators()
    u_prev = protocol.segments[-1].u_end
    for seg in protocol.segments:
        if seg.u_start != u_prev:
            state, acc = apply_quench(state, params, u_prev, seg.u_start, seg.beta)
            total = total + acc
        state, acc = propagate_segment(state, params, seg, substeps, tol)
        total = total + acc
        u_prev = seg.u_end
    return state, total
