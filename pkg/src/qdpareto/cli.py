"""Command-line interface.

Exit codes: 0 on success, 1 on a validation error (bad arguments or config),
2 when an optimization failure was recorded.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .engine import EngineParams, Protocol
from .limit_cycle import Weights, cycle_metrics, figure_of_merit
from .sweep import (ConfigError, SweepConfig, bootstrap_normalization, emit_frontier, optimize_point,
                    read_rows, run_sweep, verify_results)

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _params(cfg: dict) -> EngineParams:
    try:
        return EngineParams.from_dict(cfg.get("params", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid params: {exc}") from exc


def _weights(args) -> Weights:
    if args.a is None:
        raise ConfigError("--a is required")
    c = 0.0 if args.c is None else args.c
    try:
        return Weights.from_ac(args.a, c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _metrics_dict(m, norm, params, F=None) -> dict:
    d = {"P": m.power, "dP": m.fluct, "Sigma": m.entropy_rate, "eta": m.efficiency, "xi": m.tur_ratio,
         "period": m.period, "P_ratio": m.power / norm.p_max, "dP_ratio": m.fluct / norm.dp_at_pmax,
         "Sigma_ratio": m.entropy_rate / norm.sigma_at_pmax, "eta_over_etac": m.efficiency / params.eta_carnot}
    if F is not None:
        d["F"] = F
    return d


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def cmd_normalize(args) -> int:
    cfg = _load_config(args.config)
    params = _params(cfg)
    norm = bootstrap_normalization(params, seed=args.seed)
    _print(norm.to_dict())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "normalization.json").write_text(json.dumps(norm.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    if args.method:
        cfg["method"] = args.method
    if args.seed is not None and "seeds" not in cfg:
        cfg["seeds"] = [args.seed]
    config = SweepConfig.from_dict(cfg)
    manifest = run_sweep(config, args.out, progress=lambda r: print(f"point {r[0]} done", file=sys.stderr))
    print(f"{manifest['n_rows']} rows written, {len(manifest['failures'])} failures")
    return EXIT_FAILED if manifest["failures"] else EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load_config(args.config)
    params = _params(cfg)
    weights = _weights(args)
    method = args.method or cfg.get("method", "baseline")
    norm = bootstrap_normalization(params)
    try:
        pt = optimize_point(method, weights, norm, params, cfg.get("settings", {}), args.seed or 0)
    except ConfigError:
        raise
    except Exception as exc:
        print(f"optimization failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    result = {"method": method, "a": weights.a, "b": weights.b, "c": weights.c, "F": pt.F, "note": pt.note}
    if pt.metrics is not None:
        result.update(_metrics_dict(pt.metrics, norm, params))
    _print(result)
    if args.out and pt.protocol is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        pt.protocol.save(out / "protocol.json")
        (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True, default=float) + "\n")
    return EXIT_OK


def cmd_fast_otto(args) -> int:
    from .fast import optimize_fast_otto

    cfg = _load_config(args.config)
    params = _params(cfg)
    weights = _weights(args)
    norm = bootstrap_normalization(params)
    otto, m, F = optimize_fast_otto(weights, norm, params, seed=args.seed or 0)
    res = {"F": F, "idle": F <= 0}
    if F > 0:
        res.update({"eps_hot": otto.eps_hot, "eps_cold": otto.eps_cold, "theta_hot": otto.theta_hot})
        res.update(_metrics_dict(m, norm, params))
    _print(res)
    return EXIT_OK


def cmd_slow_driving(args) -> int:
    from .slow import IdleOptimal, low_power_asymptotics, optimize_endpoints, slow_objectives
    from .sweep import _slow_weights

    cfg = _load_config(args.config)
    params = _params(cfg)
    settings = cfg.get("settings", {})
    r = float(settings.get("r", 2.0))
    if args.a is not None:
        # --a / --c are read as alpha = b dT / a and alpha' = c / a
        alpha, alpha_p = args.a, 0.0 if args.c is None else args.c
        if alpha < 0 or alpha_p < 0:
            raise ConfigError("alpha and alpha' must be non-negative")
        gw = _slow_weights(alpha, alpha_p, params)
        try:
            cycle, G = optimize_endpoints(params, gw, r=r, seed=args.seed or 0)
        except IdleOptimal as exc:
            _print({"idle": True, "reason": str(exc)})
            return EXIT_OK
        _, m = slow_objectives(cycle, params, gw)
        _print({"idle": False, "G": G, "p_a": cycle.p_a, "p_b": cycle.p_b, "tau_hot": cycle.tau_hot,
                "tau_cold": cycle.tau_cold, "tau_wait": cycle.tau_wait, "P": m.power, "dP": m.fluct,
                "Sigma": m.entropy_rate, "eta": m.efficiency, "xi": m.tur_ratio})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        alphas = np.logspace(1, 4, 31)
        cur = low_power_asymptotics(params, float(settings.get("b", 1.0)), float(settings.get("c", 0.0)), alphas)
        with open(out / "slow_curves.csv", "w") as fh:
            fh.write("alpha,P,dP,Sigma,xi\n")
            for i in range(alphas.size):
                xi = 2 * cur["P"][i] ** 2 / (cur["Sigma"][i] * cur["dP"][i])
                fh.write(",".join(repr(float(v)) for v in (alphas[i], cur["P"][i], cur["dP"][i],
                                                           cur["Sigma"][i], xi)) + "\n")
    return EXIT_OK


def cmd_mc_check(args) -> int:
    from .fast import optimize_fast_otto
    from .mc import sample_cycles

    cfg = _load_config(args.config)
    params = _params(cfg)
    if args.protocol:
        proto = Protocol.load(args.protocol)
    else:
        otto, _, _ = optimize_fast_otto(Weights(1.0, 0.0, 0.0), None, params)
        proto = otto.protocol(params, 0.5 / params.gamma)
    stats = sample_cycles(proto, params, args.cycles, seed=args.seed or 0, block=args.block)
    m = cycle_metrics(proto, params)
    rep = stats.report()
    rep["exact_P"], rep["exact_dP"] = m.power, m.fluct
    rep["z_P"] = (stats.mean_work_rate - m.power) / stats.stderr_mean
    rep["z_dP"] = (stats.var_work_rate - m.fluct) / stats.stderr_var
    _print(rep)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "mc_report.json").write_text(stats.dumps() + "\n")
    return EXIT_OK if max(abs(rep["z_P"]), abs(rep["z_dP"])) <= 3 else EXIT_FAILED


def cmd_emit(args) -> int:
    if not args.out:
        raise ConfigError("--out (results directory) is required")
    out = Path(args.out)
    manifest = json.loads((out / "manifest.json").read_text())
    from .limit_cycle import Normalization

    params = EngineParams.from_dict(manifest["config"]["params"])
    norm = Normalization.from_dict(manifest["normalization"])
    rows = read_rows(out / "results.csv")
    files = emit_frontier(rows, out / "frontier", params, norm, figures=not args.no_figures)
    print("\n".join(files))
    return EXIT_OK


def cmd_verify(args) -> int:
    if not args.out:
        raise ConfigError("--out (results directory) is required")
    problems = verify_results(args.out)
    for p in problems:
        print(p)
    print("ok" if not problems else f"{len(problems)} mismatches")
    return EXIT_OK if not problems else EXIT_INVALID


COMMANDS = {
    "normalize": cmd_normalize,
    "sweep": cmd_sweep,
    "optimize": cmd_optimize,
    "fast-otto": cmd_fast_otto,
    "slow-driving": cmd_slow_driving,
    "mc-check": cmd_mc_check,
    "emit": cmd_emit,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdpareto", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output or results directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--method", choices=("rl", "baseline", "fast-otto", "slow-driving"))
        p.add_argument("--a", type=float, default=None)
        p.add_argument("--c", type=float, default=None)
        if name == "mc-check":
            p.add_argument("--protocol", help="protocol JSON (default: max-power Otto at gamma*tau=0.5)")
            p.add_argument("--cycles", type=int, default=100_000)
            p.add_argument("--block", type=int, default=1024)
        if name == "emit":
            p.add_argument("--no-figures", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
