import math

import numpy as np
import pytest

from builders import linear_1d
from qmsys import build_catalog_scenario
from qmsys.cell import (
    CellError,
    CellProblemInstance,
    branch_data,
    check_effective_properties,
    effective_hamiltonian,
    effective_linear_coeffs,
    effective_values,
    ergodic_batch,
    extrapolate_to_zero,
    invariant_measure,
    measure_hamiltonian_batch,
    solve_approx_corrector,
    solve_cells,
)
from qmsys.grid import SpaceGrid
from qmsys.scenario import ZERO, CoefficientSet, ControlSet, StructuralConstants, SystemSpec, cos_mode, sin_mode, trig

SQRT3 = math.sqrt(3.0)


def inst(x=0.0, r=0.0, p=0.0, X=0.0, i=0):
    return CellProblemInstance(i, (x,), tuple(np.atleast_1d(r)), (p,), ((X,),))


def test_instance_validation():
    with pytest.raises(ValueError, match="symmetric"):
        CellProblemInstance(0, (0.0, 0.0), (0.0,), (0.0, 0.0), ((1.0, 2.0), (0.0, 1.0)))
    spec = build_catalog_scenario("hom_linear_1d")
    with pytest.raises(ValueError, match="out of range"):
        ergodic_batch(spec, [inst(i=3)], cell=16)


def test_slow_only_corrector_is_flat():
    spec = linear_1d(sigma=1.0, drift=0.5, cost=0.25, nu=1.0)
    v = solve_approx_corrector(spec, inst(p=2.0), 0.1, cell=16)
    # H = 0.5*2 + 0.25 everywhere, so lam v = -H
    assert v.values == pytest.approx(np.full((1, 16), -1.25 / 0.1), rel=1e-12)


def test_requires_elliptic():
    spec = build_catalog_scenario("firstorder_2sys")
    with pytest.raises(ValueError, match="elliptic"):
        solve_approx_corrector(spec, CellProblemInstance(0, (0.0,), (0.0, 0.0), (0.0,), ((0.0,),)), 0.1, cell=16)


def test_discounted_residual_and_shape():
    spec = build_catalog_scenario("hom_hjb_1d")
    sol = effective_hamiltonian(spec, inst(x=0.3, p=1.0, X=-0.5), cell=64)
    assert max(sol.residuals) <= 1e-9
    w = sol.corrector.values
    assert w.ravel()[0] == 0.0
    assert np.ptp(w) > 1e-3


def test_linear_effective_value():
    spec = build_catalog_scenario("hom_linear_1d")
    sol = effective_hamiltonian(spec, inst(X=-1.0), cell=128)
    assert sol.H_bar == pytest.approx(SQRT3, abs=1e-4)
    assert sol.spreads == sorted(sol.spreads, reverse=True)


def test_linear_in_X():
    spec = build_catalog_scenario("hom_linear_1d")
    vals = ergodic_batch(spec, [inst(X=s) for s in (-2.0, -1.0, 0.5, 3.0)], cell=64)[0]
    slope = vals[1] - vals[0]
    assert slope == pytest.approx(-SQRT3, abs=1e-3)
    assert vals == pytest.approx([slope * s for s in (-2.0, -1.0, 0.5, 3.0)], abs=1e-6)


def test_howard_matches_sweep():
    spec = build_catalog_scenario("hom_isaacs_1d")
    cell = SpaceGrid(16)
    A, G = branch_data(spec, [inst(x=0.2, p=0.7, X=1.5)], cell)
    c1, w1, _ = solve_cells(A, G, 0.2, cell.h, 1, "howard")
    c2, w2, _ = solve_cells(A, G, 0.2, cell.h, 1, "sweep", tol=1e-11)
    assert (c1[0] + w1) == pytest.approx(c2[0] + w2, abs=1e-7)


def test_solve_cells_arguments():
    spec = build_catalog_scenario("hom_linear_1d")
    cell = SpaceGrid(8)
    A, G = branch_data(spec, [inst()], cell)
    with pytest.raises(ValueError):
        solve_cells(A, G, 0.0, cell.h, 1)
    with pytest.raises(ValueError):
        solve_cells(A, G, 0.1, cell.h, 1, "newton")


def test_lambda_schedule_validation():
    spec = build_catalog_scenario("hom_linear_1d")
    with pytest.raises(ValueError):
        ergodic_batch(spec, [inst()], lambdas=(0.1, 0.05), cell=8)
    with pytest.raises(ValueError):
        ergodic_batch(spec, [inst()], lambdas=(0.05, 0.1, 0.025), cell=8)


def test_extrapolation_exact_on_polynomials():
    lam = [0.1, 0.05, 0.025]
    vals = np.array([[1.0 + 2.0 * l - 3.0 * l * l, 4.0 - l] for l in lam])
    assert extrapolate_to_zero(lam, vals) == pytest.approx([1.0, 4.0], abs=1e-13)
    assert extrapolate_to_zero([0.2, 0.1], np.array([1.2, 1.1])) == pytest.approx(1.0)


def test_no_ergodic_limit_detected():
    # zero diffusion with two attracting points of different cost
    cs = CoefficientSet(
        sigma=((ZERO,),),
        drift=(trig(0.0, sin_mode(1.0, ky=(1,))),),
        cost=trig(0.0, cos_mode(1.0, ky=(1,))),
        coupling=(ZERO,),
    )
    spec = SystemSpec("trap", 1, 1, ControlSet(("0",), ("0",)), (((cs,),),), (ZERO,), constants=StructuralConstants(nu=1.0))
    with pytest.raises(CellError, match="no ergodic limit"):
        ergodic_batch(spec, [inst()], cell=32)


def test_uniform_measure_for_constant_diffusion():
    spec = linear_1d(sigma=1.0, nu=1.0)
    mu = invariant_measure(spec, 0, 0.0, cell=32)
    assert mu.density.values == pytest.approx(np.ones((1, 32)), abs=1e-10)


def test_measure_of_oscillating_diffusion():
    spec = build_catalog_scenario("hom_linear_1d")
    cell = SpaceGrid(128)
    mu = invariant_measure(spec, 0, 0.0, cell=cell)
    y = cell.coords()[0]
    expected = SQRT3 / (2.0 + np.sin(2 * math.pi * y))
    assert mu.density.values[0] == pytest.approx(expected, abs=1e-3)
    assert mu.density.values.mean() == pytest.approx(1.0, abs=1e-12)
    coeffs = effective_linear_coeffs(spec, 0.0, cell=cell)
    assert coeffs.a_bar[0, 0, 0] == pytest.approx(SQRT3, abs=1e-4)
    assert coeffs.weights.sum() == pytest.approx(1.0)


def test_power_and_direct_measures_agree():
    spec = build_catalog_scenario("hom_coupled_1d")
    a = invariant_measure(spec, 1, 0.4, cell=64, method="power").density.values
    b = invariant_measure(spec, 1, 0.4, cell=64, method="direct").density.values
    assert a == pytest.approx(b, abs=1e-6)


def test_measure_matches_cell_problems():
    spec = build_catalog_scenario("hom_coupled_1d")
    instances = [CellProblemInstance(i, (0.3,), (0.5, -0.2), (0.8,), ((-1.0,),)) for i in range(2)]
    a = measure_hamiltonian_batch(spec, instances, cell=64)
    b = ergodic_batch(spec, instances, cell=64)[0]
    assert a == pytest.approx(b, abs=1e-3)


def test_measure_requires_control_free_diffusion():
    spec = build_catalog_scenario("hom_isaacs_1d")
    with pytest.raises(ValueError, match="control-independent"):
        invariant_measure(spec, 0, 0.0, cell=16)


def test_generator_rows_survive_averaging():
    spec = build_catalog_scenario("hom_coupled_1d")
    base = [CellProblemInstance(i, (0.1,), (0.3, -0.4), (0.5,), ((0.2,),)) for i in range(2)]
    shifted = [CellProblemInstance(i, (0.1,), (1.3, 0.6), (0.5,), ((0.2,),)) for i in range(2)]
    for method in ("measure", "cell"):
        a = effective_values(spec, base, method, cell=32)
        b = effective_values(spec, shifted, method, cell=32)
        assert a == pytest.approx(b, abs=1e-9)


def test_effective_values_without_fast_variables():
    spec = build_catalog_scenario("isaacs_1d")
    val = effective_values(spec, [inst(x=0.2, r=0.1, p=1.0, X=2.0)])
    assert val.shape == (1,)
    with pytest.raises(ValueError):
        effective_values(build_catalog_scenario("hom_linear_1d"), [inst()], "guess")


def test_effective_properties_small_budget():
    rep = check_effective_properties(build_catalog_scenario("hom_hjb_1d"), budget=40, cell=32)
    assert rep.passed
    assert rep.samples >= 40
    assert rep.lipschitz_C1 <= rep.lipschitz_bound
    assert rep.convexity_violations == 0
    rep = check_effective_properties(build_catalog_scenario("hom_linear_1d"), budget=40, cell=64)
    assert rep.nu_bar == pytest.approx(SQRT3, abs=1e-3)
    with pytest.raises(ValueError):
        check_effective_properties(build_catalog_scenario("hom_linear_1d"), budget=0)
