"""Monte-Carlo sampler of the two-level jump process, used to cross-check work statistics.

The occupation ``n`` of the excited level jumps up at rate ``gamma * pi`` and
down at rate ``gamma * (1 - pi)``. Equivalently, at rate ``gamma`` the state is
redrawn from ``Bernoulli(pi(t))``; ramps are simulated this way, while constant
segments use the exact two-state transition probability. Work is
``-d_eps * (n - 1/2)`` for every change ``d_eps`` of the gap, whether at a
quench or along a ramp between jumps.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .engine import EngineParams, Protocol, fermi


@dataclass(frozen=True)
class TrajectoryStats:
    """Work-rate statistics from blocks of ``block`` consecutive cycles."""

    n_cycles: int
    mean_work_rate: float
    var_work_rate: float
    stderr_mean: float
    stderr_var: float
    block: int
    period: float

    def report(self) -> dict:
        return {"P": self.mean_work_rate, "dP": self.var_work_rate, "stderr_P": self.stderr_mean,
                "stderr_dP": self.stderr_var, "n_cycles": self.n_cycles, "K": self.block}

    def dumps(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)

    def to_dict(self) -> dict:
        return asdict(self)


def _ramp_work(n, rng, params: EngineParams, seg, out):
    """Advance occupations through a linear ramp; adds the work to ``out``."""
    e0, e1 = seg.u_start * params.e0, seg.u_end * params.e0
    rate = (e1 - e0) / seg.duration
    t = np.zeros(n.shape)
    active = np.ones(n.shape, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        t_next = t[idx] + rng.exponential(1.0 / params.gamma, idx.size)
        done = t_next >= seg.duration
        t_stop = np.where(done, seg.duration, t_next)
        out[idx] -= rate * (t_stop - t[idx]) * (n[idx] - 0.5)
        jump = idx[~done]
        if jump.size:
            pi = fermi(seg.beta * (e0 + rate * t_next[~done]))
            n[jump] = rng.random(jump.size) < pi
            t[jump] = t_next[~done]
        active[idx[done]] = False


def _run_cycle(n, rng, protocol: Protocol, params: EngineParams, out):
    u_prev = protocol.segments[-1].u_end
    decays = [math.exp(-params.gamma * s.duration) for s in protocol.segments]
    for seg, decay in zip(protocol.segments, decays):
        if seg.u_start != u_prev:
            out -= (seg.u_start - u_prev) * params.e0 * (n - 0.5)
        if seg.duration > 0:
            if seg.is_constant:
                pi = float(fermi(seg.beta * seg.u_start * params.e0))
                prob = pi + (n - pi) * decay
                n[:] = rng.random(n.size) < prob
            else:
                _ramp_work(n, rng, params, seg, out)
        u_prev = seg.u_end


def _variance_stderr(x: np.ndarray) -> float:
    m = x.size
    if m < 4:
        return math.inf
    d = x - x.mean()
    m2, m4 = np.mean(d**2), np.mean(d**4)
    return float(math.sqrt(max(m4 - (m - 3) / (m - 1) * m2**2, 0.0) / m))


def sample_cycles(protocol: Protocol, params: EngineParams, n_cycles: int, n_burnin: int = 20,
                  seed: int = 0, block: int = 16, n_chains: int | None = None) -> TrajectoryStats:
    """Estimate the mean and variance of the work rate from simulated trajectories.

    Independent chains run in parallel; each discards ``n_burnin`` cycles and
    then groups its cycles into blocks of ``block`` consecutive periods. The
    variance of the block totals divided by ``block * tau`` includes the
    correlations between cycles up to the block length.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be at least 1")
    if block < 1:
        raise ValueError("block must be at least 1")
    n_blocks = math.ceil(n_cycles / block)
    if n_chains is None:
        n_chains = min(n_blocks, 4096)
    n_chains = max(1, min(n_chains, n_blocks))
    per_chain = math.ceil(n_blocks / n_chains)
    rng = np.random.default_rng(seed)
    n = rng.random(n_chains) < 0.5
    n = n.astype(float)
    sink = np.zeros(n_chains)
    for _ in range(n_burnin):
        _run_cycle(n, rng, protocol, params, sink)
    totals = np.empty((per_chain, n_chains))
    for b in range(per_chain):
        acc = np.zeros(n_chains)
        for _ in range(block):
            _run_cycle(n, rng, protocol, params, acc)
        totals[b] = acc
    x = totals.ravel()
    scale = block * protocol.period
    mean = x.mean() / scale
    var = x.var(ddof=1) / scale if x.size > 1 else 0.0
    se_mean = x.std(ddof=1) / math.sqrt(x.size) / scale if x.size > 1 else math.inf
    return TrajectoryStats(int(x.size * block), float(mean), float(var), float(se_mean),
                           _variance_stderr(x) / scale, block, protocol.period)
