import csv
import json
import subprocess
import sys

import pytest

from builders import linear_1d
from qmsys.cli import build_parser, run
from qmsys.scenario import save_scenario


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_list(capsys):
    assert run(["list"]) == 0
    out = capsys.readouterr().out
    assert "heat_1d" in out and "hom_isaacs_1d" in out


def test_solve_outputs(tmp_path, capsys):
    code = run(["solve", "--scenario", "heat_1d", "--nx", "16", "--t-final", "1/20", "--snapshots", "2", "--out", str(tmp_path)])
    assert code == 0
    manifest = json.loads((tmp_path / "heat_1d_manifest.json").read_text())
    assert "wall_time" not in manifest
    assert manifest["snapshots"] == ["heat_1d_snap0000.csv", "heat_1d_snap0001.csv", "heat_1d_snap0002.csv"]
    assert manifest["times"][-1] == pytest.approx(0.05)
    rows = read_csv(tmp_path / "heat_1d_snap0002.csv")
    assert len(rows) == 17
    assert "wall_time" in json.loads((tmp_path / "timing.json").read_text())


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("QMSYS_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["solve", "--scenario", "heat_1d", "--nx", "8", "--t-final", "0.01", "--snapshots", "1"]) == 0
    assert (tmp_path / "env" / "heat_1d_manifest.json").exists()
    # --out wins over the environment
    assert run(["solve", "--scenario", "heat_1d", "--nx", "8", "--t-final", "0.01", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "heat_1d_manifest.json").exists()


def test_usage_errors(tmp_path, capsys):
    assert run(["solve", "--nx", "8", "--out", str(tmp_path)]) == 2
    assert run(["solve", "--scenario", "nope"]) == 2
    assert run(["bogus"]) == 2
    assert run(["vanish", "--scenario", "heat_1d", "--eps", "1/10,1/5,1/40", "--nx", "8", "--out", str(tmp_path)]) == 2
    assert "not decreasing" in capsys.readouterr().err
    assert run(["homogenize", "--scenario", "hom_linear_1d", "--nx", "64", "--eps", "1/3", "--out", str(tmp_path)]) == 2
    assert run(["list", "--threads", "0"]) == 2
    assert run(["cell", "--scenario", "hom_linear_1d", "--x", "0.1,0.2", "--out", str(tmp_path)]) == 2


def test_fraction_parsing():
    args = build_parser().parse_args(["homogenize", "--scenario", "hom_linear_1d", "--eps", "1/4, 0.125", "--t-final", "1/10"])
    assert [str(e) for e in args.eps] == ["1/4", "1/8"]
    assert args.t_final == pytest.approx(0.1)
    with pytest.raises(SystemExit):
        build_parser().parse_args(["vanish", "--eps", "a,b"])


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "blow.yaml"
    save_scenario(linear_1d(sigma=1.0, coupling=[[-1000.0]], u0=[1.0], name="blow"), cfg)
    code = run(["solve", "--config", str(cfg), "--nx", "4", "--t-final", "10", "--out", str(tmp_path)])
    assert code == 1
    assert "blow-up" in capsys.readouterr().err


def test_cde_command(tmp_path):
    assert run(["cde", "--scenario", "heat_1d", "--kind", "l", "--nx", "16", "--t-final", "0.1", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "cde_l_heat_1d.csv")
    assert rows[0] == ["study", "scenario", "param", "error", "fitted_exponent", "residual", "pass"]
    assert all(r[-1] == "1" for r in rows[1:])


def test_failed_study_exit_code(tmp_path):
    # a zero perturbation list leaves nothing to fit, so the sweep fails
    assert run(["cde", "--scenario", "heat_1d", "--delta", "0", "--nx", "8", "--t-final", "0.01", "--out", str(tmp_path)]) == 1


def test_cell_and_measure_commands(tmp_path, capsys):
    assert run(["cell", "--scenario", "hom_linear_1d", "--X", "-1", "--n-cell", "64", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "cell_hom_linear_1d_0_summary.json").read_text())
    assert summary["H_bar"] == pytest.approx(3**0.5, abs=1e-3)
    assert len(read_csv(tmp_path / "cell_hom_linear_1d_0.csv")) == 4
    assert run(["measure", "--scenario", "hom_coupled_1d", "--component", "1", "--n-cell", "32", "--nx", "4", "--out", str(tmp_path)]) == 0
    table = read_csv(tmp_path / "measure_hom_coupled_1d_1_coefficients.csv")
    assert table[0] == ["x1", "i", "a_bar_11", "F_bar_0"]
    assert len(table) == 1 + 4 * 2


def test_check_command(tmp_path, capsys):
    assert run(["check", "--suite", "structure", "--scenario", "isaacs_1d", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "check_structure.csv")
    assert rows[0] == ["suite", "scenario", "check", "value", "pass"]
    assert {r[2] for r in rows[1:]} == {"quasi_monotone", "ellipticity", "constants"}
    assert "3/3 checks passed" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qmsys", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "heat_1d" in res.stdout
    res = subprocess.run([sys.executable, "-m", "qmsys", "solve"], capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 2
