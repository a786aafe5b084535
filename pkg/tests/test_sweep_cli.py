import csv
import json

import numpy as np
import pytest

from qdpareto.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from qdpareto.engine import EngineParams, Protocol
from qdpareto.fast import G_MAX, pareto_border
from qdpareto.limit_cycle import Normalization
from qdpareto.slow import loglog_slope
from qdpareto.sweep import (ConfigError, SweepConfig, bootstrap_normalization, default_grid, emit_frontier,
                            non_dominated, read_rows, run_sweep, verify_results)

PARAMS = EngineParams()


def fast_config(tmp_path, **kw):
    d = {"grid": [[1.0, 0.0], [0.7, 0.3], [0.5, 0.5], [0.6, 0.2], [0.4, 0.1]], "method": "fast-otto",
         "seeds": [0], "output": str(tmp_path / "res")}
    d.update(kw)
    return d


# -- configuration ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"grid": []})
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"grid": [[0.8, 0.4]]})
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"grid": [[0.8, 0.1]], "method": "gradient"})
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"grid": [[0.8, 0.1]], "colour": 1})
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"method": "slow-driving", "settings": {"alpha": [1.0]}})
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"grid": [[0.8, 0.1]], "params": {"beta_hot": 3.0}})
    cfg = SweepConfig.from_dict({"grid": {"step": 0.05}})
    assert SweepConfig.from_dict(cfg.to_dict()) == cfg


def test_default_grid():
    grid = default_grid()
    assert len(grid) == sum(21 - i for i in range(4, 21))
    assert (0.2, 0.0) in grid and (1.0, 0.0) in grid and (0.2, 0.8) in grid
    assert all(a >= 0.2 and a + c <= 1 + 1e-12 for a, c in grid)


def test_normalization_bootstrap():
    n1, n2 = bootstrap_normalization(PARAMS), bootstrap_normalization(PARAMS)
    assert n1 == n2
    assert n1.p_max == pytest.approx(0.009288433845, rel=1e-8)
    assert n1.dp_at_pmax == pytest.approx(0.014105200589, rel=1e-8)
    assert n1.sigma_at_pmax == pytest.approx(0.012767949861, rel=1e-8)


@pytest.mark.parametrize("dT", [0.01, 0.001])
def test_normalization_small_dt_relations(dT):
    p = EngineParams(beta_hot=2 / (1 + dT), beta_cold=2.0)
    n = bootstrap_normalization(p)
    T = p.t_cold
    assert n.dp_at_pmax / (T * n.p_max) == pytest.approx(2.0, rel=2 * dT)
    assert n.p_max / (p.gamma * T) == pytest.approx(G_MAX * dT**2 / 16, rel=2 * dT)


# -- sweeps -----------------------------------------------------------------------------

def test_sweep_is_byte_identical_and_verifies(tmp_path):
    cfg = SweepConfig.from_dict(fast_config(tmp_path))
    m1 = run_sweep(cfg, tmp_path / "r1")
    m2 = run_sweep(cfg, tmp_path / "r2")
    assert m1 == m2 and not m1["failures"] and m1["n_rows"] == 5
    for name in ("results.csv", "normalization.json", "manifest.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    assert verify_results(tmp_path / "r1") == []
    rows = read_rows(tmp_path / "r1" / "results.csv")
    assert [r["F"] for r in rows][0] == pytest.approx(1.0, abs=2e-3)


def test_verify_detects_tampering(tmp_path):
    run_sweep(SweepConfig.from_dict(fast_config(tmp_path, grid=[[0.8, 0.1]])), tmp_path / "r")
    f = next((tmp_path / "r" / "protocols").iterdir())
    proto = Protocol.load(f)
    proto.scaled(1.5).save(f)
    assert verify_results(tmp_path / "r")
    f.unlink()
    assert verify_results(tmp_path / "r") == [f"protocols/{f.name}: missing"]


def test_fast_otto_hypotenuse_rows(tmp_path):
    grid = [[a, round(1 - a, 10)] for a in np.arange(0.2, 1.0001, 0.2)]
    run_sweep(SweepConfig.from_dict(fast_config(tmp_path, grid=grid)), tmp_path / "r")
    rows = read_rows(tmp_path / "r" / "results.csv")
    assert len(rows) == 5
    for r in rows:
        assert r["F"] >= 0 and r["b"] == pytest.approx(0.0, abs=1e-12)
        if r["protocol_file"]:
            segs = Protocol.load(tmp_path / "r" / r["protocol_file"]).segments
            assert len(segs) == 2 and all(s.u_start == s.u_end for s in segs)


def test_slow_driving_sweep(tmp_path):
    cfg = SweepConfig.from_dict({"method": "slow-driving", "settings": {"alpha": [0.1, 1.0],
                                                                        "alpha_prime": [0.1, 10.0]}})
    man = run_sweep(cfg, tmp_path / "r")
    assert man["n_rows"] == 4 and not man["failures"]
    rows = read_rows(tmp_path / "r" / "results.csv")
    assert all(r["period"] > 10 and r["eta_over_etac"] > 0 for r in rows)
    assert {(r["alpha"], r["alpha_prime"]) for r in rows} == {(0.1, 0.1), (0.1, 10.0), (1.0, 0.1), (1.0, 10.0)}


def test_failures_are_recorded_not_raised(tmp_path):
    cfg = SweepConfig.from_dict(fast_config(tmp_path, method="rl", grid=[[0.8, 0.1]],
                                            settings={"overrides": {"discount": 2.0}}))
    man = run_sweep(cfg, tmp_path / "r")
    assert man["n_rows"] == 0 and len(man["failures"]) == 1
    assert "discount" in man["failures"][0]["errors"][0]


# -- frontier datasets ------------------------------------------------------------------

def test_non_dominated_flags():
    P = np.array([1.0, 0.5, 0.4, 0.9])
    dP = np.array([1.0, 0.5, 0.6, 1.1])
    S = np.array([1.0, 0.5, 0.6, 1.1])
    assert non_dominated(P, dP, S).tolist() == [True, True, False, False]


def test_emit_frontier(tmp_path):
    run_sweep(SweepConfig.from_dict(fast_config(tmp_path)), tmp_path / "r")
    rows = read_rows(tmp_path / "r" / "results.csv")
    norm = Normalization.from_dict(json.loads((tmp_path / "r" / "normalization.json").read_text()))
    files = emit_frontier(rows, tmp_path / "f", PARAMS, norm)
    for name in ("pareto.csv", "border.csv", "contour.csv", "xi_vs_P.csv", "xi_analytic.csv", "pareto.png",
                 "contour.png", "xi.png"):
        assert name in files and (tmp_path / "f" / name).stat().st_size > 0
    with open(tmp_path / "f" / "border.csv") as fh:
        border = [tuple(map(float, r)) for r in list(csv.reader(fh))[1:]]
    assert border[0] == (0.0, 0.0) and border[-1] == (1.0, 1.0)
    with open(tmp_path / "f" / "pareto.csv") as fh:
        prow = list(csv.DictReader(fh))
    P = np.array([float(r["P_ratio"]) for r in prow])
    dP = np.array([float(r["dP_ratio"]) for r in prow])
    S = np.array([float(r["Sigma_ratio"]) for r in prow])
    flags = np.array([r["non_dominated"] == "1" for r in prow])
    for i in np.flatnonzero(flags):
        assert not np.any((P > P[i]) & (dP < dP[i]) & (S < S[i]))
        assert P[i] <= pareto_border(min(dP[i], 1.0)) + 0.01 or dP[i] > 1.0
    with open(tmp_path / "f" / "xi_analytic.csv") as fh:
        xi = list(csv.DictReader(fh))
    slope = loglog_slope([float(r["P_ratio"]) for r in xi], [float(r["xi_P"]) for r in xi])
    assert slope == pytest.approx(-2.0, abs=1e-9)
    with pytest.raises(ValueError):
        emit_frontier([], tmp_path / "g", PARAMS, norm)


# -- command line -----------------------------------------------------------------------

def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_validation_errors(capsys, tmp_path):
    assert run_cli(capsys)[0] == EXIT_INVALID
    assert run_cli(capsys, "frobnicate")[0] == EXIT_INVALID
    assert run_cli(capsys, "optimize")[0] == EXIT_INVALID
    assert run_cli(capsys, "fast-otto", "--a", "0.8", "--c", "0.5")[0] == EXIT_INVALID
    assert run_cli(capsys, "sweep", "--config", str(tmp_path / "missing.json"))[0] == EXIT_INVALID
    (tmp_path / "empty.json").write_text(json.dumps({"grid": []}))
    code, _, err = run_cli(capsys, "sweep", "--config", str(tmp_path / "empty.json"))
    assert code == EXIT_INVALID and "empty" in err
    assert run_cli(capsys, "verify")[0] == EXIT_INVALID
    assert run_cli(capsys, "slow-driving", "--a", "-1")[0] == EXIT_INVALID


def test_cli_normalize_and_fast_otto(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "normalize", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert json.loads(out)["p_max"] == pytest.approx(0.009288433845, rel=1e-8)
    assert (tmp_path / "normalization.json").exists()
    code, out, _ = run_cli(capsys, "fast-otto", "--a", "1")
    res = json.loads(out)
    assert code == EXIT_OK and res["F"] == pytest.approx(1.0, rel=1e-8) and not res["idle"]
    code, out, _ = run_cli(capsys, "fast-otto", "--a", "0", "--c", "1")
    assert code == EXIT_OK and json.loads(out)["idle"]


def test_cli_sweep_verify_emit(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(fast_config(tmp_path, grid=[[1.0, 0.0], [0.6, 0.2]])))
    out_dir = str(tmp_path / "res")
    assert run_cli(capsys, "sweep", "--config", str(cfg), "--out", out_dir)[0] == EXIT_OK
    code, out, _ = run_cli(capsys, "verify", "--out", out_dir)
    assert code == EXIT_OK and out.strip().endswith("ok")
    code, out, _ = run_cli(capsys, "emit", "--out", out_dir, "--no-figures")
    assert code == EXIT_OK and "pareto.csv" in out and "pareto.png" not in out
    prot = next((tmp_path / "res" / "protocols").iterdir())
    Protocol.load(prot).scaled(2.0).save(prot)
    assert run_cli(capsys, "verify", "--out", out_dir)[0] == EXIT_INVALID


def test_cli_failure_exit_code(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(fast_config(tmp_path, method="rl", grid=[[0.8, 0.1]],
                                          settings={"overrides": {"discount": 2.0}})))
    assert run_cli(capsys, "sweep", "--config", str(cfg), "--out", str(tmp_path / "r"))[0] == EXIT_FAILED


def test_cli_slow_driving(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "slow-driving", "--a", "1.0", "--c", "0.5", "--out", str(tmp_path))
    res = json.loads(out)
    assert code == EXIT_OK and not res["idle"] and 0 < res["p_b"] < res["p_a"] <= 0.5
    with open(tmp_path / "slow_curves.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 31
    slope = loglog_slope([float(r["P"]) for r in rows], [float(r["xi"]) for r in rows])
    assert slope == pytest.approx(-2.0, abs=1e-9)


def test_cli_optimize_baseline_writes_protocol(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"settings": {"family": "otto", "budget": 100}}))
    code, out, _ = run_cli(capsys, "optimize", "--config", str(cfg), "--method", "baseline", "--a", "1",
                           "--out", str(tmp_path / "o"))
    assert code == EXIT_OK and json.loads(out)["F"] > 0
    assert (tmp_path / "o" / "protocol.json").exists()


def test_cli_mc_check(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "mc-check", "--cycles", "200000", "--block", "256", "--seed", "1",
                           "--out", str(tmp_path))
    rep = json.loads(out)
    assert code == EXIT_OK and abs(rep["z_P"]) <= 3 and abs(rep["z_dP"]) <= 3
    assert {"P", "dP", "stderr_P", "stderr_dP", "n_cycles", "K"} <= set(rep)
    assert (tmp_path / "mc_report.json").exists()
