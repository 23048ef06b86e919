import math

import numpy as np
import pytest

from builders import linear_1d
from qmsys import build_catalog_scenario
from qmsys.grid import GridFunction, SpaceGrid, sample_fields
from qmsys.hamiltonian import DiscreteOperatorConfig, cfl_timestep
from qmsys.scenario import ScenarioError
from qmsys.solver import (
    SolverError,
    barrier_constant,
    check_barrier,
    check_comparison,
    inverse_epsilon,
    snapshot_steps,
    solve_parabolic,
)


def heat_error(n, T=0.1):
    spec = build_catalog_scenario("heat_1d")
    g = SpaceGrid(n)
    tr = solve_parabolic(spec, g, T)
    exact = math.exp(-4 * math.pi**2 * tr.times[-1]) * np.sin(2 * math.pi * g.coords()[0])
    return float(np.abs(tr.final.values[0] - exact).max()), tr


def test_heat_matches_closed_form():
    err, tr = heat_error(64)
    assert err <= 5e-3
    assert tr.times[-1] == pytest.approx(0.1, abs=1e-15)
    assert tr.manifest["steps"] == tr.steps


def test_heat_grid_convergence_ratio():
    e = [heat_error(n)[0] for n in (32, 64, 128)]
    for a, b in zip(e, e[1:]):
        assert 1.7 <= a / b <= 4.3


def test_two_state_switching_matrix_exponential():
    spec = linear_1d(m=2, coupling=[[1.0, -1.0], [-1.0, 1.0]], u0=[1.0, 0.0])
    tr = solve_parabolic(spec, SpaceGrid(8), 1.0, dt=2e-5)
    e = math.exp(-2.0)
    assert tr.final.values[0] == pytest.approx(np.full(8, (1 + e) / 2), abs=1e-4)
    assert tr.final.values[1] == pytest.approx(np.full(8, (1 - e) / 2), abs=1e-4)


def test_constant_cost_gives_linear_decay():
    spec = linear_1d(sigma=0.7, drift=0.3, cost=2.5)
    tr = solve_parabolic(spec, SpaceGrid(16), 0.4)
    assert tr.final.values == pytest.approx(np.full((1, 16), -2.5 * tr.times[-1]), abs=1e-12)


def test_snapshot_selection():
    assert snapshot_steps(10, 4) == [0, 2, 5, 7, 10]
    assert snapshot_steps(3, 64) == [0, 1, 2, 3]
    assert 6 in snapshot_steps(100, 4, extra=[6])


def test_store_times_and_lookup():
    spec = build_catalog_scenario("heat_1d")
    tr = solve_parabolic(spec, SpaceGrid(16), 0.2, n_snapshots=2, store_times=[0.05])
    assert tr.at(0.05).t == pytest.approx(0.05, abs=tr.dt)
    with pytest.raises(SolverError):
        tr.at(0.13)


def test_cfl_refusal_and_bad_step():
    spec = build_catalog_scenario("heat_1d")
    g = SpaceGrid(32)
    with pytest.raises(SolverError, match="exceeds CFL"):
        solve_parabolic(spec, g, 0.1, dt=2 * cfl_timestep(spec, g.h))
    with pytest.raises(SolverError):
        solve_parabolic(spec, g, 0.1, dt=0.0)


def test_blow_up_detected():
    spec = linear_1d(coupling=[[-1000.0]], u0=[1.0])
    with pytest.raises(SolverError, match="blow-up"):
        solve_parabolic(spec, SpaceGrid(4), 2.0, dt=1e-3)


def test_fast_scale_arity():
    g = SpaceGrid(64)
    with pytest.raises(ScenarioError):
        solve_parabolic(build_catalog_scenario("hom_linear_1d"), g, 0.01)
    with pytest.raises(ScenarioError):
        solve_parabolic(build_catalog_scenario("heat_1d"), g, 0.01, fast_epsilon=0.25)


def test_inverse_epsilon():
    g = SpaceGrid(64)
    assert inverse_epsilon(0.125, g) == 8
    assert inverse_epsilon(1 / 16, g) == 16
    with pytest.raises(ScenarioError, match="reciprocal"):
        inverse_epsilon(0.3, g)
    with pytest.raises(ScenarioError, match="does not divide"):
        inverse_epsilon(1 / 3, g)


def test_initial_datum_mismatch():
    spec = build_catalog_scenario("heat_1d")
    with pytest.raises(SolverError):
        solve_parabolic(spec, SpaceGrid(16), 0.1, u0=GridFunction(np.zeros((1, 8)), SpaceGrid(8)))


def test_comparison_identical_and_shifted():
    spec = build_catalog_scenario("isaacs_1d")
    g = SpaceGrid(32)
    u0 = sample_fields(spec.u0, g)
    rep = check_comparison(spec, u0, u0, 0.2)
    assert rep.passed and rep.max_violation == 0.0
    hi = GridFunction(u0.values + 1.0, g)
    rep = check_comparison(spec, u0, hi, 0.2)
    assert rep.passed and rep.checked_steps > 0


def test_comparison_ordered_random_data():
    spec = build_catalog_scenario("coupled_switch_2sys")
    g = SpaceGrid(32)
    rng = np.random.default_rng(3)
    lo = rng.normal(size=(2, 32))
    hi = lo + rng.uniform(0, 0.5, size=lo.shape)
    rep = check_comparison(spec, GridFunction(lo, g), GridFunction(hi, g), 0.1)
    assert rep.passed


def test_comparison_precondition():
    spec = build_catalog_scenario("heat_1d")
    g = SpaceGrid(8)
    with pytest.raises(SolverError, match="precondition"):
        check_comparison(spec, GridFunction(np.ones((1, 8)), g), GridFunction(np.zeros((1, 8)), g), 0.1)


def test_barrier():
    spec = build_catalog_scenario("coupled_switch_2sys")
    rep = check_barrier(spec, SpaceGrid(32), 0.5)
    assert rep.passed and rep.max_excess < 0
    assert rep.C_tilde == pytest.approx(barrier_constant(spec))


def test_viscosity_changes_solution():
    spec = build_catalog_scenario("isaacs_1d")
    g = SpaceGrid(32)
    a = solve_parabolic(spec, g, 0.05).final.values
    b = solve_parabolic(spec, g, 0.05, DiscreteOperatorConfig(eps_visc=0.1)).final.values
    assert np.abs(a - b).max() > 1e-6
