import json
import math
import subprocess
import sys

import pytest

from homconc import schulgasser as S
from homconc.cli import main
from homconc.geometry import SchulgasserCell

LAMINATE = {"type": "laminate", "dim": 2, "resolution": 16, "normal_axis": 0,
            "fractions": [0.5, 0.5], "conductivities": [1.0, 2.0]}
R_HALF = (3 * 0.5 / (4 * math.pi)) ** (1 / 3)
SCHULGASSER = {"type": "schulgasser", "lambda2": 0.75, "resolution": 16,
               "crystallites": [{"center": [0.5, 0.5, 0.5], "radius": R_HALF}]}
STRIP = {"extents": [1.0, 1.0], "counts": [4, 4],
         "bcs": {"x-": {"type": "dirichlet"}, "x+": {"type": "neumann", "g": 1.0}}}


def run(tmp_path, command, config, capsys=None, name="run.json"):
    cfg = tmp_path / name
    cfg.write_text(json.dumps(config))
    out = tmp_path / "out"
    code = main([command, "--config", str(cfg), "--out", str(out)])
    return code, out


def test_solve_cell_laminate(tmp_path):
    code, out = run(tmp_path, "solve-cell", {"geometry": LAMINATE, "solver": {"tol": 1e-10}})
    assert code == 0
    res = json.loads((out / "effective_tensor.json").read_text())
    assert res["effective_tensor"][0][0] == pytest.approx(4 / 3, abs=1e-8)
    assert res["effective_tensor"][1][1] == pytest.approx(1.5, abs=1e-8)
    prov = res["provenance"]
    assert len(prov["config_sha256"]) == 64 and prov["kernel_backend"] in ("cython", "numpy")
    for f in res["files"].values():
        assert (out / f).exists()


def test_moments_laminate_csv(tmp_path):
    cfg = {"geometry": LAMINATE, "solver": {"tol": 1e-10, "resolutions": [16, 32]},
           "analysis": {"p_grid": [2, 4], "phases": [0, 1]}}
    code, out = run(tmp_path, "moments", cfg)
    assert code == 0
    lines = (out / "concentration.csv").read_text().splitlines()
    assert lines[0] == "p,phase,value,divergent_flag,resolution"
    row = lines[1].split(",")
    assert row[1] == "-1" and float(row[2]) == pytest.approx((10 / 9) ** 0.5, abs=1e-8) and row[3] == "0"
    data = json.loads((out / "concentration.json").read_text())
    assert data["threshold_estimate"] == "+inf"


def test_analytic_moments_match_closed_form(tmp_path):
    cfg = {"geometry": SCHULGASSER, "analysis": {"mode": "analytic", "p_grid": [2, 3, 5, 6, 7]}}
    code, out = run(tmp_path, "moments", cfg)
    assert code == 0
    cell = SchulgasserCell.single(radius=R_HALF)
    rows = [l.split(",") for l in (out / "concentration.csv").read_text().splitlines()[1:]]
    for p, phase, value, flag, res in rows:
        p = float(p)
        if p < 6:
            assert float(value) == pytest.approx(S.lambda_moment(cell, p) ** (1 / p), abs=1e-8)
            assert flag == "0"
        else:
            assert value == "+inf" and flag == "1"
        assert res == "0"


def test_bound_strip(tmp_path):
    cfg = {"macro": dict(STRIP, subdomains={"0": {"geometry": LAMINATE}}), "solver": {"tol": 1e-10},
           "analysis": {"p_grid": [2], "t_grid": [1.0, 10.0], "D": {"lo": [0.25, 0.25], "hi": [0.75, 0.75]}}}
    code, out = run(tmp_path, "bound", cfg)
    assert code == 0
    bound = json.loads((out / "bound.json").read_text())
    # A^E_11 = 4/3, unit inflow: grad u^H = (3/4, 0) on D (|D| = 1/4)
    expected = 0.75 * ((10 / 9) ** 0.5) * 0.5
    assert bound["bounds"][0]["value"] == pytest.approx(expected, rel=1e-7)
    cheb = (out / "chebyshev.csv").read_text()
    assert "2.0,-1,+inf,0.0" in cheb


def test_verify_oracle_pass_and_fail(tmp_path):
    code, out = run(tmp_path, "verify-oracle", {"geometry": SCHULGASSER})
    assert code == 0 and json.loads((out / "oracle.json").read_text())["passed"]
    bad = dict(SCHULGASSER, lambda1=2.1)
    code, out = run(tmp_path, "verify-oracle", {"geometry": bad}, name="bad.json")
    assert code == 1
    failed = json.loads((out / "oracle.json").read_text())["failed"]
    assert "identity_defect" in failed


def test_sweep_command(tmp_path):
    cfg = {"geometry": dict(LAMINATE, resolution=8), "macro": STRIP,
           "sweep": {"epsilons": [0.25, 0.125], "p_list": [2], "psi": {"p": 2, "clip": 4}}}
    code, out = run(tmp_path, "sweep", cfg)
    assert code == 0
    data = json.loads((out / "sweep.json").read_text())
    assert data["summary"]["lower_bound_sandwich"] is True
    assert (out / "sweep.csv").read_text().startswith("epsilon,quantity,p_or_t,phase,value\n")


def test_config_errors_exit_2(tmp_path, capsys):
    code, _ = run(tmp_path, "solve-cell", {"geometry": LAMINATE, "bogus": 1})
    assert code == 2
    err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert err["status"] == "error" and err["kind"] == "config"
    assert run(tmp_path, "moments", {"solver": {}})[0] == 2
    assert run(tmp_path, "moments", {"geometry": dict(LAMINATE, fractions=[0.5, 0.6])})[0] == 2
    assert run(tmp_path, "moments", {"geometry": LAMINATE, "analysis": {"p_grid": [3, 2]}})[0] == 2
    assert run(tmp_path, "moments", {"geometry": LAMINATE, "analysis": {"mode": "analytic"}})[0] == 2
    assert run(tmp_path, "sweep", {"geometry": dict(LAMINATE, resolution=8), "macro": STRIP,
                                   "sweep": {"epsilons": [0.3]}})[0] == 2


def test_convergence_error_exit_3(tmp_path, capsys):
    geo = {"type": "multiphase", "dim": 2, "resolution": 16, "phases": [
        {"conductivity": 1.0, "shapes": [{"kind": "background"}]},
        {"conductivity": 100.0, "shapes": [{"kind": "ball", "center": [0.5, 0.5], "radius": 0.3}]}]}
    code, _ = run(tmp_path, "solve-cell", {"geometry": geo, "solver": {"tol": 1e-12, "max_iter": 2}})
    assert code == 3
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["kind"] == "convergence"


def test_deterministic_outputs(tmp_path):
    cfg = {"geometry": LAMINATE, "solver": {"resolutions": [16, 32]}, "analysis": {"p_grid": [2, 3]}}
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    _, out_a = run(a, "moments", cfg)
    _, out_b = run(b, "moments", cfg)
    for name in ("concentration.csv", "concentration.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"geometry": SCHULGASSER, "analysis": {"mode": "analytic", "p_grid": [2]}}))
    proc = subprocess.run([sys.executable, "-m", "homconc.cli", "moments", "--config", str(cfg),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
