"""Weight-simplex sweeps, normalization, result persistence and frontier datasets."""
from __future__ import annotations

import csv
import functools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import optimize_baseline
from .engine import EngineParams, Protocol
from .fast import optimize_fast_otto, pareto_border
from .limit_cycle import CycleMetrics, Normalization, Weights, cycle_metrics, figure_of_merit
from .slow import IdleOptimal, low_power_asymptotics, optimize_endpoints, synthesize_slow_protocol

METHODS = ("rl", "baseline", "fast-otto", "slow-driving")
ROW_FIELDS = ("a", "b", "c", "method", "P_ratio", "dP_ratio", "Sigma_ratio", "eta_over_etac", "xi", "F",
              "period", "seed", "protocol_file")


class ConfigError(ValueError):
    pass


# -- normalization ----------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _normalization_cached(params: EngineParams, seed: int) -> Normalization:
    _, m, _ = optimize_fast_otto(Weights(1.0, 0.0, 0.0), None, params, seed=seed)
    return Normalization(m.power, m.fluct, m.entropy_rate)


def bootstrap_normalization(params: EngineParams, seed: int = 0) -> Normalization:
    """Power, fluctuations and entropy production of the maximum-power cycle (cached)."""
    return _normalization_cached(params, seed)


# -- configuration ----------------------------------------------------------------------

def default_grid(step: float = 0.05, a_min: float = 0.2) -> list[tuple[float, float]]:
    n = round(1 / step)
    pts = []
    for i in range(round(a_min / step), n + 1):
        a = round(i * step, 10)
        for j in range(0, n - i + 1):
            pts.append((a, round(j * step, 10)))
    return pts


@dataclass(frozen=True)
class SweepConfig:
    """Sweep description, read from JSON.

    Keys: ``params`` (engine parameters), ``grid`` (list of ``[a, c]`` pairs or
    ``{"step": s, "a_min": m}``), ``method``, ``settings`` (method options),
    ``seeds``, ``output`` and ``workers``. For ``slow-driving`` the grid is
    replaced by ``settings.alpha`` and ``settings.alpha_prime`` lists.
    """

    params: EngineParams = field(default_factory=EngineParams)
    grid: tuple = ()
    method: str = "fast-otto"
    settings: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    output: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.method == "slow-driving":
            if not self.settings.get("alpha") or not self.settings.get("alpha_prime"):
                raise ConfigError("slow-driving needs nonempty settings.alpha and settings.alpha_prime")
            return
        if not self.grid:
            raise ConfigError("weight grid is empty")
        for a, c in self.grid:
            if a < -1e-12 or c < -1e-12 or a + c > 1 + 1e-12:
                raise ConfigError(f"weights (a={a}, c={c}) are off the simplex")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {"params", "grid", "method", "settings", "seeds", "output", "workers"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        grid = d.get("grid", [])
        if isinstance(grid, dict):
            grid = default_grid(grid.get("step", 0.05), grid.get("a_min", 0.2))
        try:
            params = EngineParams.from_dict(d.get("params", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid params: {exc}") from exc
        return cls(params=params, grid=tuple((float(a), float(c)) for a, c in grid),
                   method=d.get("method", "fast-otto"), settings=dict(d.get("settings", {})),
                   seeds=tuple(int(s) for s in d.get("seeds", [0])), output=d.get("output", "results"),
                   workers=int(d.get("workers", 1)))

    @classmethod
    def load(cls, path) -> "SweepConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "grid": [list(g) for g in self.grid], "method": self.method,
                "settings": self.settings, "seeds": list(self.seeds), "output": self.output,
                "workers": self.workers}


# -- single-point optimization ----------------------------------------------------------

@dataclass(frozen=True)
class PointResult:
    weights: Weights
    protocol: Protocol | None
    metrics: CycleMetrics | None
    F: float
    seed: int
    note: str = ""


def _slow_weights(alpha: float, alpha_prime: float, params: EngineParams) -> tuple[float, float, float]:
    """Weights ``(a, b, c)`` of ``G`` with ``a = 1``, ``alpha = b dT / a``, ``alpha' = c / a``."""
    return 1.0, alpha / (params.t_hot - params.t_cold), alpha_prime


def _simplex_from_slow(g_weights, norm: Normalization) -> Weights:
    a, b, c = g_weights
    return Weights.normalized(a * norm.p_max, 0.5 * b * norm.dp_at_pmax, c * norm.sigma_at_pmax)


def optimize_point(method: str, weights: Weights, norm: Normalization, params: EngineParams,
                   settings: dict, seed: int) -> PointResult:
    """Optimize one weight point with ``method`` and re-score the result exactly."""
    if method == "fast-otto":
        otto, _, f_fast = optimize_fast_otto(weights, norm, params, seed=seed)
        if f_fast <= 0:
            return PointResult(weights, None, None, 0.0, seed, "idle")
        tau = float(settings.get("tau", 1e-3))
        proto = otto.protocol(params, tau / params.gamma)
    elif method == "baseline":
        res = optimize_baseline(settings.get("family", "trapezoid"), weights, norm, params,
                                budget=int(settings.get("budget", 400)), seed=seed,
                                n_nodes=int(settings.get("n_nodes", 3)))
        proto = res.protocol
    elif method == "rl":
        from .sac import best_policy, evaluate_deterministic, preset, train_sac

        overrides = dict(settings.get("overrides", {}))
        overrides.setdefault("eval_every", 1000)  # keep the best deterministic snapshot
        cfg = preset(settings.get("preset", "v1-reduced"), seed=seed, **overrides)
        agent, log = train_sac(cfg, weights, norm, params)
        ev = evaluate_deterministic(best_policy(agent, log), params, weights, norm, cfg.dt)
        proto = ev.protocol
    elif method == "slow-driving":
        raise ConfigError("slow-driving points are addressed by (alpha, alpha_prime)")
    else:
        raise ConfigError(f"unknown method {method!r}")
    m = cycle_metrics(proto, params)
    return PointResult(weights, proto, m, figure_of_merit(m, weights, norm), seed)


def optimize_slow_point(alpha: float, alpha_prime: float, norm: Normalization, params: EngineParams,
                        settings: dict, seed: int) -> PointResult:
    gw = _slow_weights(alpha, alpha_prime, params)
    weights = _simplex_from_slow(gw, norm)
    try:
        cycle, _ = optimize_endpoints(params, gw, r=float(settings.get("r", 2.0)), seed=seed)
    except IdleOptimal:
        return PointResult(weights, None, None, 0.0, seed, "idle")
    proto = synthesize_slow_protocol(cycle, params, int(settings.get("n_segments", 16)))
    m = cycle_metrics(proto, params)
    return PointResult(weights, proto, m, figure_of_merit(m, weights, norm), seed)


# -- sweep ------------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _row(pt: PointResult, method: str, norm: Normalization, params: EngineParams, ref: str) -> dict:
    w, m = pt.weights, pt.metrics
    if m is None:
        vals = dict(P_ratio=0.0, dP_ratio=0.0, Sigma_ratio=0.0, eta_over_etac=math.nan, xi=math.nan,
                    period=math.nan)
    else:
        vals = dict(P_ratio=m.power / norm.p_max, dP_ratio=m.fluct / norm.dp_at_pmax,
                    Sigma_ratio=m.entropy_rate / norm.sigma_at_pmax,
                    eta_over_etac=m.efficiency / params.eta_carnot, xi=m.tur_ratio, period=m.period)
    return {"a": w.a, "b": w.b, "c": w.c, "method": method, **vals, "F": pt.F, "seed": pt.seed,
            "protocol_file": ref}


def _job(args):
    kind, key, method, norm, params, settings, seeds = args
    best, errors = None, []
    for seed in seeds:
        try:
            if kind == "slow":
                pt = optimize_slow_point(key[0], key[1], norm, params, settings, seed)
            else:
                pt = optimize_point(method, Weights.from_ac(*key), norm, params, settings, seed)
        except Exception as exc:  # recorded per point; the sweep carries on
            errors.append(f"seed {seed}: {type(exc).__name__}: {exc}")
            continue
        if best is None or pt.F > best.F:
            best = pt
    return key, best, errors


def _point_name(method: str, key) -> str:
    if method == "slow-driving":
        return f"slow_alpha{key[0]:g}_alphap{key[1]:g}"
    return f"{method}_a{key[0]:.4f}_c{key[1]:.4f}"


def run_sweep(config: SweepConfig, out_dir=None, progress=None) -> dict:
    """Optimize every grid point and persist rows, protocols and a manifest.

    Returns the manifest. Failures are listed in the manifest instead of
    aborting the sweep.
    """
    out = Path(out_dir or config.output)
    (out / "protocols").mkdir(parents=True, exist_ok=True)
    params = config.params
    norm = bootstrap_normalization(params)
    if config.method == "slow-driving":
        keys = [(float(al), float(ap)) for al in config.settings["alpha"] for ap in config.settings["alpha_prime"]]
        kind = "slow"
    else:
        keys = list(config.grid)
        kind = "weights"
    jobs = [(kind, k, config.method, norm, params, config.settings, config.seeds) for k in keys]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_job(job))
            if progress is not None:
                progress(results[-1])
    rows, failures = [], []
    for key, pt, errors in results:
        if pt is None:
            failures.append({"point": list(key), "errors": errors})
            continue
        ref = ""
        if pt.protocol is not None:
            ref = f"protocols/{_point_name(config.method, key)}.json"
            pt.protocol.save(out / ref)
        row = _row(pt, config.method, norm, params, ref)
        if kind == "slow":
            row["alpha"], row["alpha_prime"] = key
        rows.append(row)
    write_rows(out / "results.csv", rows)
    with open(out / "normalization.json", "w") as fh:
        json.dump(norm.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {"version": __version__, "config": config.to_dict(), "normalization": norm.to_dict(),
                "n_points": len(keys), "n_rows": len(rows), "failures": failures}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def write_rows(path, rows: list[dict]) -> None:
    extra = [k for k in ("alpha", "alpha_prime") if rows and k in rows[0]]
    fields = list(ROW_FIELDS) + extra
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([r[k] if isinstance(r[k], str) else (_fmt(r[k]) if k not in ("seed",) else r[k])
                        for k in fields])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k not in ("method", "protocol_file"):
                r[k] = int(v) if k == "seed" else float(v)
    return rows


def verify_results(out_dir, rtol: float = 1e-9) -> list[str]:
    """Re-score stored protocols; returns a list of mismatch descriptions (empty when clean)."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    params = EngineParams.from_dict(manifest["config"]["params"])
    norm = Normalization.from_dict(manifest["normalization"])
    problems = []
    for r in read_rows(out / "results.csv"):
        if not r["protocol_file"]:
            continue
        path = out / r["protocol_file"]
        if not path.exists():
            problems.append(f"{r['protocol_file']}: missing")
            continue
        m = cycle_metrics(Protocol.load(path), params)
        for key, val in (("P_ratio", m.power / norm.p_max), ("dP_ratio", m.fluct / norm.dp_at_pmax),
                         ("Sigma_ratio", m.entropy_rate / norm.sigma_at_pmax)):
            if abs(val - r[key]) > rtol * max(abs(val), 1e-300):
                problems.append(f"{r['protocol_file']}: {key} {r[key]} != {val}")
    return problems


# -- frontier datasets ------------------------------------------------------------------

def non_dominated(P, dP, S) -> np.ndarray:
    """Rows not strictly worse in all three objectives (maximize P, minimize dP and Sigma) than another."""
    P, dP, S = (np.asarray(v, dtype=float) for v in (P, dP, S))
    flags = np.ones(P.size, dtype=bool)
    for i in range(P.size):
        worse = (P > P[i]) & (dP < dP[i]) & (S < S[i])
        flags[i] = not worse.any()
    return flags


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])


def xi_envelope(params: EngineParams, norm: Normalization, alpha_grid, k_grid=None) -> dict:
    """Analytic low-power TUR curves, maximized over ``c/b`` at each abscissa.

    Each closed form is ``C(c/b) * x**(-n)``, so the envelope is the largest
    prefactor times the power law.
    """
    k_grid = np.logspace(-3, 3, 61) if k_grid is None else np.asarray(k_grid)
    best = None
    for k in np.concatenate([[0.0], k_grid]):
        cur = low_power_asymptotics(params, 1.0, float(k), alpha_grid)
        pref = {"P": cur["xi_P"] * cur["P"] ** 2, "dP": cur["xi_dP"] * cur["dP"], "Sigma": cur["xi_Sigma"] * cur["Sigma"]}
        if best is None:
            best = {key: (v, cur) for key, v in pref.items()}
        else:
            for key, v in pref.items():
                if v[0] > best[key][0][0]:
                    best[key] = (v, cur)
    out = {"alpha": np.asarray(alpha_grid, dtype=float)}
    for key, scale, power in (("P", norm.p_max, 2), ("dP", norm.dp_at_pmax, 1), ("Sigma", norm.sigma_at_pmax, 1)):
        pref, cur = best[key]
        x = cur[key]
        out[f"{key}_ratio"] = x / scale
        out[f"xi_{key}"] = pref / x**power
    return out


def emit_frontier(rows: list[dict], out_dir, params: EngineParams, norm: Normalization,
                  which=("pareto", "contour", "xi_curves"), figures: bool = True) -> list[str]:
    """Write plot-ready CSVs (and PNG figures) for the requested datasets."""
    if not rows:
        raise ValueError("no result rows to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    P = np.array([r["P_ratio"] for r in rows])
    dP = np.array([r["dP_ratio"] for r in rows])
    S = np.array([r["Sigma_ratio"] for r in rows])
    nd = non_dominated(P, dP, S)
    if "pareto" in which:
        _write_csv(out / "pareto.csv", ("a", "c", "method", "P_ratio", "dP_ratio", "eta_ratio", "Sigma_ratio",
                                        "non_dominated"),
                   [(r["a"], r["c"], r["method"], r["P_ratio"], r["dP_ratio"], r["eta_over_etac"],
                     r["Sigma_ratio"], "1" if f else "0") for r, f in zip(rows, nd)])
        grid = np.linspace(0.0, 1.0, 201)
        _write_csv(out / "border.csv", ("dP_ratio", "P_ratio"), zip(grid, pareto_border(grid)))
        written += ["pareto.csv", "border.csv"]
    if "contour" in which:
        _write_csv(out / "contour.csv", ("a", "c", "F"), [(r["a"], r["c"], r["F"]) for r in rows])
        written.append("contour.csv")
    if "xi_curves" in which:
        for key, col in (("P", "P_ratio"), ("dP", "dP_ratio"), ("Sigma", "Sigma_ratio")):
            data = [(r["a"], r["c"], r[col], r["xi"]) for r in rows if math.isfinite(r["xi"])]
            _write_csv(out / f"xi_vs_{key}.csv", ("a", "c", col, "xi"), data)
            written.append(f"xi_vs_{key}.csv")
        env = xi_envelope(params, norm, np.logspace(1, 4, 61))
        _write_csv(out / "xi_analytic.csv", ("alpha", "P_ratio", "xi_P", "dP_ratio", "xi_dP", "Sigma_ratio",
                                             "xi_Sigma"),
                   zip(env["alpha"], env["P_ratio"], env["xi_P"], env["dP_ratio"], env["xi_dP"],
                       env["Sigma_ratio"], env["xi_Sigma"]))
        written.append("xi_analytic.csv")
    if figures:
        written += render_figures(out, rows, nd, which, params, norm)
    return written


def render_figures(out: Path, rows, nd, which, params: EngineParams, norm: Normalization) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    if "pareto" in which:
        fig, ax = plt.subplots(figsize=(5, 4))
        grid = np.linspace(0, 1, 201)
        ax.plot(grid, pareto_border(grid), "k-", lw=1, label="fast-driving border")
        P = np.array([r["P_ratio"] for r in rows])
        dP = np.array([r["dP_ratio"] for r in rows])
        eta = np.array([r["eta_over_etac"] for r in rows])
        sc = ax.scatter(P[nd], dP[nd], c=eta[nd], cmap="viridis", s=18)
        fig.colorbar(sc, ax=ax, label="eta / eta_c")
        ax.set_xlabel("P / P_max")
        ax.set_ylabel("dP / dP(P_max)")
        ax.legend(loc="upper left")
        fig.tight_layout()
        fig.savefig(out / "pareto.png", dpi=120)
        plt.close(fig)
        files.append("pareto.png")
    if "contour" in which:
        fig, ax = plt.subplots(figsize=(5, 4))
        sc = ax.scatter([r["a"] for r in rows], [r["c"] for r in rows], c=[r["F"] for r in rows],
                        cmap="magma", s=40, marker="s")
        fig.colorbar(sc, ax=ax, label="F")
        ax.set_xlabel("a")
        ax.set_ylabel("c")
        fig.tight_layout()
        fig.savefig(out / "contour.png", dpi=120)
        plt.close(fig)
        files.append("contour.png")
    if "xi_curves" in which:
        env = xi_envelope(params, norm, np.logspace(1, 4, 61))
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
        for ax, (key, col) in zip(axes, (("P", "P_ratio"), ("dP", "dP_ratio"), ("Sigma", "Sigma_ratio"))):
            pts = [(r[col], r["xi"]) for r in rows if math.isfinite(r["xi"]) and r[col] > 0]
            if pts:
                x, y = zip(*pts)
                ax.loglog(x, y, "o", ms=4)
            ax.loglog(env[col], env[f"xi_{key}"], "k-", lw=1)
            ax.set_xlabel(col)
            ax.set_ylabel("xi")
        fig.tight_layout()
        fig.savefig(out / "xi.png", dpi=120)
        plt.close(fig)
        files.append("xi.png")
    return files
