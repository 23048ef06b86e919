import json
import math
from fractions import Fraction

import numpy as np
import pytest

from builders import linear_1d
from qmsys import build_catalog_scenario
from qmsys.cell import CellError
from qmsys.experiments import (
    continuous_dependence_sweep,
    effective_problem_solver,
    homogenization_study,
    parse_fraction,
    perturb_spec,
    vanishing_viscosity_study,
)
from qmsys.grid import GridFunction, SpaceGrid, sample_fields
from qmsys.scenario import ScenarioError
from qmsys.solver import solve_parabolic

SQRT3 = math.sqrt(3.0)


def closed_form_linear(t, x):
    return math.exp(-4 * math.pi**2 * SQRT3 * t) * np.sin(2 * math.pi * x[0])


def test_parse_fraction():
    assert parse_fraction("1/8") == Fraction(1, 8)
    assert parse_fraction(" 0.125 ") == Fraction(1, 8)
    assert parse_fraction(0.1) == Fraction(1, 10)
    with pytest.raises(ValueError):
        parse_fraction("eighth")


def test_vanishing_viscosity_heat():
    spec = build_catalog_scenario("heat_1d")
    rep = vanishing_viscosity_study(spec, ["1/10", "1/20", "1/40", "1/80"], SpaceGrid(32), 0.1)
    assert rep.fit.exponent == pytest.approx(1.0, abs=0.2)
    assert rep.passed
    assert rep.errors == sorted(rep.errors, reverse=True)


def test_vanishing_viscosity_rejects_bad_lists():
    spec = build_catalog_scenario("heat_1d")
    with pytest.raises(ValueError, match="not decreasing"):
        vanishing_viscosity_study(spec, [0.1, 0.2, 0.05], SpaceGrid(16), 0.1)
    with pytest.raises(ValueError):
        vanishing_viscosity_study(spec, [0.1, 0.05], SpaceGrid(16), 0.1)
    with pytest.raises(ScenarioError):
        vanishing_viscosity_study(build_catalog_scenario("hom_linear_1d"), [0.1, 0.05, 0.02], SpaceGrid(16), 0.1)


def test_perturbations():
    spec = build_catalog_scenario("coupled_switch_2sys")
    assert perturb_spec(spec, "l", 0.0) is spec
    d = perturb_spec(spec, "d", 0.3)
    for i in range(2):
        row = d.table[i][0][0].coupling
        assert sum(f(0.0, (np.array(0.37),)) for f in row) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        perturb_spec(spec, "a", -1.0)
    with pytest.raises(ValueError):
        perturb_spec(spec, "q", 0.1)


def test_cde_sweep_cost_is_exact():
    spec = build_catalog_scenario("heat_1d")
    rep = continuous_dependence_sweep(spec, "l", [0.1, 0.05, 0.025, 0.0], SpaceGrid(32), 0.25)
    assert rep.errors[-1] == 0.0
    for d, e in zip(rep.params[:-1], rep.errors[:-1]):
        assert e == pytest.approx(d * 0.25, rel=1e-12)
    assert rep.passed and rep.details["zero_ok"]
    assert rep.study == "cde_l"


def test_cde_sweep_coupling_rate():
    spec = build_catalog_scenario("coupled_switch_2sys")
    rep = continuous_dependence_sweep(spec, "d", [0.2, 0.1, 0.05], SpaceGrid(32), 0.25)
    assert rep.fit.exponent == pytest.approx(1.0, abs=0.15)


def test_effective_without_fast_variables_is_direct():
    spec = build_catalog_scenario("isaacs_1d")
    g = SpaceGrid(32)
    a = effective_problem_solver(spec, g, 0.1)
    b = solve_parabolic(spec, g, 0.1)
    assert a.manifest["path"] == "direct"
    assert np.abs(a.final.values - b.final.values).max() <= 1e-12


def test_effective_closed_form():
    spec = build_catalog_scenario("hom_linear_1d")
    g = SpaceGrid(128)
    tr = effective_problem_solver(spec, g, 0.05, cell=64)
    exact = closed_form_linear(tr.times[-1], g.coords())
    assert np.abs(tr.final.values[0] - exact).max() <= 5e-3


def test_lambda_and_measure_paths_agree():
    spec = build_catalog_scenario("hom_coupled_1d")
    g = SpaceGrid(64)
    a = effective_problem_solver(spec, g, 0.05, path="measure", cell=64)
    b = effective_problem_solver(spec, g, 0.05, path="lambda", cell=64)
    assert np.abs(a.final.values - b.final.values).max() <= 2e-3


def test_effective_comparison_principle():
    spec = build_catalog_scenario("hom_hjb_1d")
    g = SpaceGrid(32)
    u0 = sample_fields(spec.u0, g)
    hi = GridFunction(u0.values + 0.5 * (1 + np.cos(2 * np.pi * g.coords()[0])), g)
    lo_tr = effective_problem_solver(spec, g, 0.05, cell=32, u0=u0)
    hi_tr = effective_problem_solver(spec, g, 0.05, cell=32, u0=hi, dt=lo_tr.dt)
    assert np.all(lo_tr.final.values <= hi_tr.final.values + 1e-12)


def test_effective_rejects_unknown_path():
    spec = build_catalog_scenario("hom_linear_1d")
    with pytest.raises(ValueError):
        effective_problem_solver(spec, SpaceGrid(16), 0.01, path="exact")


def test_general_path_budget():
    spec = build_catalog_scenario("hom_isaacs_1d")
    with pytest.raises(CellError, match="budget exceeded"):
        effective_problem_solver(spec, SpaceGrid(16), 0.01, path="general", cell=16, cache_cap=10)


def test_homogenization_without_fast_scale():
    spec = linear_1d(sigma=1.0, cost=0.2, u0=[0.5], nu=1.0)
    rep = homogenization_study(spec, ["1/2", "1/4"], SpaceGrid(64), 0.05)
    assert rep.errors == [0.0, 0.0]
    assert rep.passed


def test_homogenization_linear_reference():
    spec = build_catalog_scenario("hom_linear_1d")
    rep = homogenization_study(spec, ["1/2", "1/4", "1/8"], SpaceGrid(128), 0.05, reference=closed_form_linear, cell=64)
    assert rep.passed
    assert all(b < a for a, b in zip(rep.errors, rep.errors[1:]))
    assert rep.details["effective_reference_error"] <= 5e-3
    assert all(r.extra["reference_error"] < 0.1 for r in rep.rows)


def test_homogenization_hjb_small():
    spec = build_catalog_scenario("hom_hjb_1d")
    rep = homogenization_study(spec, ["1/2", "1/4", "1/8"], SpaceGrid(128), 0.02, cell=32)
    assert rep.details["path"] == "measure"
    assert rep.passed


def test_general_path_matches_measure_path():
    spec = build_catalog_scenario("hom_hjb_1d")
    g = SpaceGrid(32)
    gen = effective_problem_solver(spec, g, 0.05, path="general", cell=32)
    mea = effective_problem_solver(spec, g, 0.05, path="measure", cell=32, dt=gen.dt)
    # central versus upwind gradients and 1e-3 key rounding
    assert np.abs(gen.final.values - mea.final.values).max() <= 5e-3


def test_homogenization_isaacs_small():
    spec = build_catalog_scenario("hom_isaacs_1d")
    rep = homogenization_study(spec, ["1/2", "1/4", "1/8"], SpaceGrid(128), 0.02, cell=32)
    assert rep.passed
    assert rep.manifest["effective"]["cell_solves"] > 0


def test_homogenization_scale_errors():
    spec = build_catalog_scenario("hom_linear_1d")
    with pytest.raises(ScenarioError, match="reciprocal"):
        homogenization_study(spec, [0.3, 0.1], SpaceGrid(64), 0.01)
    with pytest.raises(ScenarioError, match="divide"):
        homogenization_study(spec, ["1/3"], SpaceGrid(64), 0.01)
    with pytest.raises(ScenarioError, match="under-resolved"):
        homogenization_study(spec, ["1/4", "1/8"], SpaceGrid(64), 0.01)


def test_report_files(tmp_path):
    spec = build_catalog_scenario("heat_1d")
    rep = continuous_dependence_sweep(spec, "l", [0.1, 0.05, 0.025], SpaceGrid(16), 0.1)
    path = rep.write(tmp_path / "cde.csv", include_timing=False)
    lines = path.read_text().splitlines()
    assert lines[0] == "study,scenario,param,error,fitted_exponent,residual,pass"
    assert len(lines) == 4 and lines[1].startswith("cde_l,heat_1d,0.10000000000000001,")
    manifest = json.loads((tmp_path / "cde.manifest.json").read_text())
    assert "wall_time" not in manifest and manifest["kind"] == "l"
