"""Soft actor-critic over piecewise-constant controls of the engine.

The environment state is the extended state ``(p, s1)`` plus the previous gap
control; an action picks the gap control and the bath inverse temperature for
one time step of length ``dt``. The reward is the figure of merit accumulated
over the step divided by ``dt``; the quench caused by an action is counted in
that action's step.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .engine import EngineParams, ExtendedState, Protocol, Segment, apply_quench, gibbs_population, propagate_constant
from .limit_cycle import CycleMetrics, Normalization, Weights, cycle_metrics, figure_of_merit
from .nn import MLP, Adam, read_checkpoint, write_checkpoint

LAMBDA_COV = 1e-6
EPS_RESET = 1e-6
ACTION_DIM = 2
STATE_DIM = 3
LOG_2PI = math.log(2 * math.pi)


class TrainingDiverged(RuntimeError):
    pass


class NoCycleDetected(RuntimeError):
    pass


@dataclass(frozen=True)
class RlConfig:
    dt: float = 0.5
    hidden_layers: int = 2
    hidden_units: int = 256
    batch_size: int = 256
    learning_rate: float = 1e-3
    discount: float = 0.9997
    replay_capacity: int = 200_000
    polyak: float = 0.995
    n_updates: int = 50
    updates_per_step: int = 1
    initial_random_steps: int = 6000
    first_update_at: int = 1000
    h_start: float = 0.4
    h_end: float = -7.0
    h_decay: float = 108_000
    train_steps: int = 240_000
    seed: int = 0
    eps_init: float = 0.2
    q_limit: float = 1e7
    log_every: int = 1000
    eval_every: int = 0
    eval_horizon: int = 3000

    def __post_init__(self):
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.hidden_layers < 1 or self.hidden_units < 1 or self.batch_size < 1:
            raise ValueError("network and batch sizes must be positive")
        if self.n_updates < 1 or self.updates_per_step < 1 or self.replay_capacity < 1:
            raise ValueError("n_updates, updates_per_step and replay_capacity must be positive")

    def target_entropy(self, n: int) -> float:
        return self.h_end + (self.h_start - self.h_end) * math.exp(-n / self.h_decay)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RlConfig":
        return cls(**d)


_V1 = RlConfig()
_V2 = replace(_V1, dt=2.0, h_start=0.28, h_decay=162_000, discount=0.9998, train_steps=360_000)
PRESETS = {
    "v1": _V1,
    "v2": _V2,
    # desk-scale variants: shorter runs, smaller buffers and networks, shorter horizon
    "v1-reduced": replace(_V1, train_steps=50_000, replay_capacity=50_000, h_decay=22_500,
                          hidden_units=64, discount=0.99, initial_random_steps=5000),
    "v2-reduced": replace(_V2, train_steps=50_000, replay_capacity=50_000, h_decay=22_500,
                          hidden_units=64, discount=0.995, initial_random_steps=5000),
}


def preset(name: str, **overrides) -> RlConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


# -- environment ------------------------------------------------------------------------

@dataclass(frozen=True)
class RlState:
    p: float
    s1: float
    u_prev: float


class Environment:
    """One-step dynamics and rewards for constant controls held for ``dt``."""

    def __init__(self, params: EngineParams, weights: Weights, norm: Normalization, dt: float):
        self.params, self.weights, self.norm, self.dt = params, weights, norm, dt
        self.u_mid = 0.5 * (params.u_min + params.u_max)
        self.u_half = 0.5 * (params.u_max - params.u_min)
        self.b_mid = 0.5 * (params.beta_hot + params.beta_cold)
        self.b_half = 0.5 * (params.beta_cold - params.beta_hot)

    def initial_state(self) -> RlState:
        u = self.u_mid
        return RlState(float(gibbs_population(self.params, u, self.params.beta_hot)), 0.0, u)

    def features(self, state: RlState) -> np.ndarray:
        return np.array([2 * state.p - 1, state.s1, (state.u_prev - self.u_mid) / self.u_half])

    def to_controls(self, t) -> tuple[float, float]:
        """Map a squashed action in ``[-1, 1]^2`` to ``(u, beta)``."""
        u = self.u_mid + self.u_half * float(t[0])
        beta = self.b_mid + self.b_half * float(t[1])
        p = self.params
        return min(max(u, p.u_min), p.u_max), min(max(beta, p.beta_hot), p.beta_cold)

    def from_controls(self, u: float, beta: float) -> np.ndarray:
        return np.array([(u - self.u_mid) / self.u_half, (beta - self.b_mid) / self.b_half])

    def step(self, state: RlState, action) -> tuple[RlState, float, dict]:
        """Advance one step under squashed ``action``; returns the new state, reward and accumulators."""
        u, beta = self.to_controls(action)
        es = ExtendedState(state.p, state.s1)
        es, q = apply_quench(es, self.params, state.u_prev, u, beta)
        es, acc = propagate_constant(es, self.params, u, beta, self.dt)
        acc = acc + q
        w, n = self.weights, self.norm
        f = (w.a * float(acc.work) / n.p_max - w.b * float(acc.fluct) / n.dp_at_pmax
             - w.c * float(acc.entropy) / n.sigma_at_pmax)
        return RlState(float(es.p), float(es.s1), u), f / self.dt, {"acc": acc, "u": u, "beta": beta}


def env_step(state: RlState, action, weights: Weights, norm: Normalization, params: EngineParams,
             dt: float) -> tuple[RlState, float]:
    """Functional form of :meth:`Environment.step` taking physical controls ``(u, beta)``."""
    env = Environment(params, weights, norm, dt)
    new, r, _ = env.step(state, env.from_controls(*action))
    return new, r


# -- policy -----------------------------------------------------------------------------

def _log1m_tanh2(z):
    """``log(1 - tanh(z)^2)`` without cancellation."""
    return 2.0 * (math.log(2.0) - np.abs(z) - np.log1p(np.exp(-2.0 * np.abs(z))))


class SquashedGaussianPolicy:
    """Network mapping features to a mean and a factor ``M`` of the covariance ``M^T M + lambda I``."""

    def __init__(self, hidden: tuple[int, ...], rng: np.random.Generator, lam: float = LAMBDA_COV):
        self.lam = lam
        self.net = MLP((STATE_DIM, *hidden, ACTION_DIM + ACTION_DIM**2), rng, out_scale=0.1)
        self.net.params[-1][ACTION_DIM:] = np.eye(ACTION_DIM).ravel()

    def head(self, x: np.ndarray, keep: bool = True):
        out = self.net.forward(x, keep)
        return out[:, :ACTION_DIM], out[:, ACTION_DIM:].reshape(-1, ACTION_DIM, ACTION_DIM)

    def _gauss(self, M, xi1, xi2):
        d = np.einsum("bij,bi->bj", M, xi1) + math.sqrt(self.lam) * xi2
        S = np.einsum("bki,bkj->bij", M, M) + self.lam * np.eye(ACTION_DIM)
        det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] ** 2
        Sinv = np.stack([np.stack([S[:, 1, 1], -S[:, 0, 1]], -1),
                         np.stack([-S[:, 0, 1], S[:, 0, 0]], -1)], 1) / det[:, None, None]
        w = np.einsum("bij,bj->bi", Sinv, d)
        logn = -0.5 * np.einsum("bi,bi->b", d, w) - 0.5 * np.log(det) - LOG_2PI
        return d, Sinv, w, logn

    def sample(self, x: np.ndarray, xi1: np.ndarray, xi2: np.ndarray, keep: bool = True):
        """Reparameterized sample; returns ``(t, logp, cache)`` with ``t`` in ``[-1,1]^2``.

        ``logp`` is the density of ``t`` on the squashed box.
        """
        mu, M = self.head(x, keep)
        d, Sinv, w, logn = self._gauss(M, xi1, xi2)
        z = mu + d
        t = np.tanh(z)
        logp = logn - _log1m_tanh2(z).sum(axis=1)
        return t, logp, (M, xi1, Sinv, w, t)

    def backward(self, cache, g_z: np.ndarray, g_logp: np.ndarray):
        """Parameter gradients given ``dL/dz`` (through ``t`` only) and ``dL/dlogp`` per sample."""
        M, xi1, Sinv, w, t = cache
        gz = g_z + g_logp[:, None] * 2.0 * t
        S = 0.5 * (np.einsum("bi,bj->bij", w, w) - Sinv)
        gM = (np.einsum("bi,bj->bij", xi1, gz)
              + g_logp[:, None, None] * (2.0 * np.einsum("bik,bkj->bij", M, S) - np.einsum("bi,bj->bij", xi1, w)))
        grad_out = np.concatenate([gz, gM.reshape(-1, ACTION_DIM**2)], axis=1)
        grads, _ = self.net.backward(grad_out)
        return grads

    def deterministic(self, x: np.ndarray) -> np.ndarray:
        mu, _ = self.head(np.atleast_2d(x), keep=False)
        return np.tanh(mu[0])

    def log_density(self, x: np.ndarray, t: np.ndarray, half_widths=(1.0, 1.0)) -> np.ndarray:
        """Log density of squashed actions ``t`` (shape ``(n, 2)``) at one feature vector.

        With ``half_widths`` set to the control half ranges this is the density
        on the physical action box.
        """
        mu, M = self.head(np.atleast_2d(x), keep=False)
        z = np.arctanh(t)
        S = M[0].T @ M[0] + self.lam * np.eye(ACTION_DIM)
        d = z - mu[0]
        sol = np.linalg.solve(S, d.T).T
        logn = -0.5 * np.einsum("bi,bi->b", d, sol) - 0.5 * np.log(np.linalg.det(S)) - LOG_2PI
        return logn - _log1m_tanh2(z).sum(axis=1) - np.log(np.asarray(half_widths)).sum()


# -- losses (exposed for gradient checks) ------------------------------------------------

def critic_loss(q: MLP, sa: np.ndarray, y: np.ndarray):
    """Mean squared Bellman error and its parameter gradients."""
    pred = q.forward(sa)[:, 0]
    err = pred - y
    grads, _ = q.backward((2.0 * err / err.size)[:, None])
    return float(np.mean(err**2)), grads


def actor_loss(policy: SquashedGaussianPolicy, q1: MLP, q2: MLP, x: np.ndarray, xi1, xi2, eps: float):
    """``E[eps log pi - min(Q1, Q2)]`` and its policy gradients (critics held fixed)."""
    t, logp, cache = policy.sample(x, xi1, xi2)
    sa = np.concatenate([x, t], axis=1)
    v1 = q1.forward(sa)[:, 0]
    v2 = q2.forward(sa)[:, 0]
    pick1 = (v1 <= v2).astype(float)
    B = x.shape[0]
    _, gin1 = q1.backward((-pick1 / B)[:, None], need_params=False)
    _, gin2 = q2.backward((-(1.0 - pick1) / B)[:, None], need_params=False)
    g_t = (gin1 + gin2)[:, STATE_DIM:]
    g_z = g_t * (1.0 - t**2)
    grads = policy.backward(cache, g_z, np.full(B, eps / B))
    loss = float(np.mean(eps * logp - np.minimum(v1, v2)))
    return loss, grads, logp


# -- replay buffer ----------------------------------------------------------------------

class ReplayBuffer:
    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, STATE_DIM))
        self.a = np.zeros((capacity, ACTION_DIM))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, STATE_DIM))
        self.ptr = 0
        self.size = 0
        self.count = 0

    def add(self, s, a, r, s2) -> None:
        i = self.ptr
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.count += 1

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self.size, n)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]

    def stored_rewards(self) -> np.ndarray:
        return self.r[: self.size].copy()


# -- agent ------------------------------------------------------------------------------

@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    header: tuple = ("step", "reward_avg", "entropy", "epsilon", "q_loss", "pi_loss")
    evaluations: list = field(default_factory=list)
    best_F: float = -math.inf
    best_params: list | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for row in self.rows:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


class SacAgent:
    def __init__(self, config: RlConfig, rng: np.random.Generator):
        self.config = config
        hidden = (config.hidden_units,) * config.hidden_layers
        self.policy = SquashedGaussianPolicy(hidden, rng)
        sizes = (STATE_DIM + ACTION_DIM, *hidden, 1)
        self.q1, self.q2 = MLP(sizes, rng), MLP(sizes, rng)
        self.q1_targ, self.q2_targ = MLP(sizes, rng), MLP(sizes, rng)
        self.q1_targ.copy_from(self.q1)
        self.q2_targ.copy_from(self.q2)
        lr = config.learning_rate
        self.opt_pi = Adam(self.policy.net.params, lr)
        self.opt_q1 = Adam(self.q1.params, lr)
        self.opt_q2 = Adam(self.q2.params, lr)
        self.eps = np.array([config.eps_init])
        self.opt_eps = Adam([self.eps], lr)

    def act(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        xi = rng.standard_normal((2, 1, ACTION_DIM))
        t, _, _ = self.policy.sample(x[None], xi[0], xi[1], keep=False)
        return t[0]

    def update(self, batch, rng: np.random.Generator, target_entropy: float) -> tuple[float, float, float]:
        cfg = self.config
        s, a, r, s2 = batch
        B = s.shape[0]
        eps = float(self.eps[0])
        xi = rng.standard_normal((4, B, ACTION_DIM))
        t2, logp2, _ = self.policy.sample(s2, xi[0], xi[1], keep=False)
        sa2 = np.concatenate([s2, t2], axis=1)
        qt = np.minimum(self.q1_targ.forward(sa2, keep=False), self.q2_targ.forward(sa2, keep=False))[:, 0]
        y = r + cfg.discount * (qt - eps * logp2)
        sa = np.concatenate([s, a], axis=1)
        l1, g1 = critic_loss(self.q1, sa, y)
        l2, g2 = critic_loss(self.q2, sa, y)
        self.opt_q1.step(g1)
        self.opt_q2.step(g2)
        lp, gp, logp = actor_loss(self.policy, self.q1, self.q2, s, xi[2], xi[3], eps)
        self.opt_pi.step(gp)
        entropy = float(-np.mean(logp))
        self.opt_eps.step([np.array([entropy - target_entropy])])
        if self.eps[0] < 0:
            self.eps[0] = EPS_RESET
        self.q1_targ.polyak_from(self.q1, cfg.polyak)
        self.q2_targ.polyak_from(self.q2, cfg.polyak)
        if not np.all(np.abs(y) < cfg.q_limit):
            raise TrainingDiverged(f"Q targets exceeded {cfg.q_limit}")
        return 0.5 * (l1 + l2), lp, entropy

    # checkpointing
    def arrays(self) -> list[np.ndarray]:
        nets = (self.policy.net, self.q1, self.q2, self.q1_targ, self.q2_targ)
        return [p for net in nets for p in net.params] + [self.eps]

    def save(self, path) -> None:
        write_checkpoint(path, self.arrays(), tag="sac-v1:" + repr(sorted(self.config.to_dict().items())))

    def load(self, path) -> None:
        _, arrays = read_checkpoint(path)
        mine = self.arrays()
        if len(arrays) != len(mine) or any(a.shape != b.shape for a, b in zip(arrays, mine)):
            raise ValueError("checkpoint does not match the network layout")
        for dst, src in zip(mine, arrays):
            dst[...] = src


def train_sac(config: RlConfig, weights: Weights, norm: Normalization, params: EngineParams,
              progress=None) -> tuple[SacAgent, TrainingLog]:
    """Run soft actor-critic on the continuing task; returns the agent and its log.

    Gradient updates are done in bursts: every ``n_updates`` environment steps,
    ``n_updates * updates_per_step`` updates are performed on fresh batches. With ``eval_every``
    set, the deterministic policy is scored periodically by its long-run F
    (:attr:`Evaluation.score`) and the best snapshot is kept in the log (see
    :func:`best_policy`).
    """
    rng = np.random.default_rng(config.seed)
    agent = SacAgent(config, rng)
    env = Environment(params, weights, norm, config.dt)
    buf = ReplayBuffer(config.replay_capacity)
    log = TrainingLog()
    state = env.initial_state()
    x = env.features(state)
    rewards, q_loss, pi_loss, entropy = [], math.nan, math.nan, math.nan
    for step in range(config.train_steps):
        if step < config.initial_random_steps:
            a = rng.uniform(-1.0, 1.0, ACTION_DIM)
        else:
            a = agent.act(x, rng)
        state, r, _ = env.step(state, a)
        x2 = env.features(state)
        buf.add(x, a, r, x2)
        x = x2
        rewards.append(r)
        if step >= config.first_update_at and (step + 1) % config.n_updates == 0:
            h_bar = config.target_entropy(step)
            for _ in range(config.n_updates * config.updates_per_step):
                q_loss, pi_loss, entropy = agent.update(buf.sample(rng, config.batch_size), rng, h_bar)
        if (config.eval_every and step + 1 >= config.initial_random_steps
                and (step + 1) % config.eval_every == 0):
            ev = evaluate_deterministic(agent.policy, params, weights, norm, config.dt,
                                        horizon=config.eval_horizon)
            log.evaluations.append((step + 1, ev.score, ev.period_steps, ev.cycle_found))
            if ev.score > log.best_F:
                log.best_F = ev.score
                log.best_params = [p.copy() for p in agent.policy.net.params]
        if (step + 1) % config.log_every == 0:
            log.rows.append((step + 1, float(np.mean(rewards)), entropy, float(agent.eps[0]), q_loss, pi_loss))
            rewards = []
            if progress is not None:
                progress(log.rows[-1])
    return agent, log


def best_policy(agent: SacAgent, log: TrainingLog) -> SquashedGaussianPolicy:
    """Policy with the best periodically evaluated parameters (the final one if none were kept)."""
    if log.best_params is None:
        return agent.policy
    pol = SquashedGaussianPolicy((agent.config.hidden_units,) * agent.config.hidden_layers,
                                 np.random.default_rng(0), agent.policy.lam)
    for dst, src in zip(pol.net.params, log.best_params):
        dst[...] = src
    return pol


# -- evaluation -------------------------------------------------------------------------

@dataclass(frozen=True)
class Evaluation:
    protocol: Protocol
    metrics: CycleMetrics
    F: float
    period_steps: int
    cycle_found: bool
    rolled_average: float
    tail_average: float  # mean reward over the second half of the rollout

    @property
    def score(self) -> float:
        """Long-run F of the policy: the exact cycle F, or the tail average when no cycle was found."""
        return self.F if self.cycle_found else self.tail_average


def _actions_to_protocol(actions, dt: float) -> Protocol:
    return Protocol(tuple(Segment(dt, u, u, b) for u, b in actions))


def _detect_period(actions: np.ndarray, max_period: int, tol: float) -> int | None:
    n = len(actions)
    for L in range(1, max_period + 1):
        if 3 * L > n:
            break
        tail = actions[n - 2 * L:]
        if np.max(np.abs(tail[L:] - tail[:L])) <= tol:
            return L
    return None


def evaluate_deterministic(policy, params: EngineParams, weights: Weights, norm: Normalization,
                           dt: float, horizon: int = 3000, tol: float = 1e-6,
                           max_period: int | None = None, fallback_windows: int = 64) -> Evaluation:
    """Roll the deterministic policy, extract its periodic orbit and score it exactly.

    ``policy`` needs a ``deterministic(features) -> action`` method returning a
    squashed action. When no period is found, the best-scoring window of the
    last ``fallback_windows`` lengths is returned with ``cycle_found=False``.
    """
    env = Environment(params, weights, norm, dt)
    state = env.initial_state()
    actions, rewards = [], []
    for _ in range(horizon):
        a = policy.deterministic(env.features(state))
        state, r, info = env.step(state, a)
        actions.append((info["u"], info["beta"]))
        rewards.append(r)
    arr = np.array(actions)
    tail = float(np.mean(rewards[horizon // 2:]))
    L = _detect_period(arr, max_period or horizon // 3, tol)
    if L is not None:
        proto = _actions_to_protocol(actions[-L:], dt)
        m = cycle_metrics(proto, params)
        return Evaluation(proto, m, figure_of_merit(m, weights, norm), L, True, float(np.mean(rewards[-L:])), tail)
    best = None
    for L in range(1, min(fallback_windows, horizon) + 1):
        proto = _actions_to_protocol(actions[-L:], dt)
        m = cycle_metrics(proto, params)
        F = figure_of_merit(m, weights, norm)
        if best is None or F > best.F:
            best = Evaluation(proto, m, F, L, False, float(np.mean(rewards[-L:])), tail)
    return best
