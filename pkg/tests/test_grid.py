import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qmsys.grid import (
    GridFunction,
    GridMismatchError,
    SpaceGrid,
    TimeGrid,
    difference_norms,
    holder_is_sampled,
    holder_seminorm,
    read_csv,
    restrict,
    sup_norm,
    write_csv,
)


def brute_holder(values: np.ndarray, grid: SpaceGrid, mu: float) -> float:
    """All node pairs with the torus distance."""
    n = grid.n
    nodes = list(itertools.product(range(n), repeat=grid.dim))
    best = 0.0
    for a, b in itertools.combinations(nodes, 2):
        d = math.sqrt(sum(min(abs(i - j), n - abs(i - j)) ** 2 for i, j in zip(a, b))) / n
        diff = np.abs(values[(slice(None),) + a] - values[(slice(None),) + b]).max()
        best = max(best, diff / d**mu)
    return best


def sin_cos(n):
    g = SpaceGrid(n)
    x = g.coords()[0]
    return GridFunction(np.stack([np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)]), g)


def test_sup_norm_examples():
    g = SpaceGrid(64)
    assert sup_norm(GridFunction(np.zeros(64), g)) == 0.0
    assert sup_norm(sin_cos(64)) == 1.0
    assert sup_norm(GridFunction(np.full(64, 3.0), g)) == 3.0


def test_holder_sine_slope():
    u = sin_cos(256)
    assert holder_seminorm(GridFunction(u.values[:1], u.grid), 1.0) == pytest.approx(2 * np.pi, abs=1e-2)


def test_holder_constant_zero():
    assert holder_seminorm(GridFunction(np.full(32, 1.5), SpaceGrid(32)), 0.5) == 0.0


@pytest.mark.parametrize("dim,n", [(1, 16), (1, 13), (2, 6)])
@pytest.mark.parametrize("mu", [0.3, 1.0])
def test_holder_matches_brute_force(dim, n, mu):
    g = SpaceGrid(n, dim)
    rng = np.random.default_rng(n + dim)
    vals = rng.normal(size=(2,) + g.shape)
    assert not holder_is_sampled(g)
    assert holder_seminorm(GridFunction(vals, g), mu) == pytest.approx(brute_holder(vals, g, mu), rel=1e-13)


def test_large_2d_grid_uses_sampled_lower_bound():
    g = SpaceGrid(128, 2)
    assert holder_is_sampled(g)
    X, Y = g.coords()
    u = GridFunction(np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y), g)
    val = holder_seminorm(u, 1.0)
    assert val <= 2 * np.pi * math.sqrt(2) + 1e-12
    assert val == pytest.approx(2 * np.pi, rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(-10, 10)), st.floats(0.05, 1.0), st.floats(0.1, 5.0))
def test_holder_homogeneous(vals, mu, c):
    g = SpaceGrid(12)
    a = holder_seminorm(GridFunction(vals, g), mu)
    b = holder_seminorm(GridFunction(c * vals, g), mu)
    assert b == pytest.approx(c * a, rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 10, elements=st.floats(-10, 10)), st.floats(0.05, 0.95), st.floats(0.01, 0.5))
def test_holder_nondecreasing_in_mu(vals, mu, dmu):
    # torus distances are below 1, so d^mu shrinks as mu grows
    u = GridFunction(vals, SpaceGrid(10))
    assert holder_seminorm(u, min(mu + dmu, 1.0)) >= holder_seminorm(u, mu) - 1e-12


def test_holder_rejects_bad_exponent():
    with pytest.raises(ValueError):
        holder_seminorm(sin_cos(8), 0.0)


def test_difference_norms():
    u = sin_cos(32)
    assert difference_norms(u, u) == {"sup": 0.0, "components": [0.0, 0.0]}
    v = u.with_values(u.values + np.array([0.25, 0.0])[:, None])
    out = difference_norms(u, v)
    assert out["sup"] == pytest.approx(0.25) and out["components"][1] == 0.0
    assert difference_norms(v, u) == out
    with pytest.raises(GridMismatchError):
        difference_norms(u, sin_cos(16))


def test_restrict():
    u = sin_cos(128)
    r = restrict(u, SpaceGrid(64))
    np.testing.assert_array_equal(r.values, u.values[:, ::2])
    c = GridFunction(np.full(128, 2.0), SpaceGrid(128))
    assert np.all(restrict(c, SpaceGrid(16)).values == 2.0)
    np.testing.assert_array_equal(restrict(restrict(u, SpaceGrid(32)), SpaceGrid(8)).values, restrict(u, SpaceGrid(8)).values)
    with pytest.raises(GridMismatchError, match="nested"):
        restrict(u, SpaceGrid(48))


def test_restrict_2d():
    g = SpaceGrid(16, 2)
    vals = np.arange(256.0).reshape(16, 16)
    np.testing.assert_array_equal(restrict(GridFunction(vals, g), SpaceGrid(4, 2)).values[0], vals[::4, ::4])


def test_grid_function_guards():
    g = SpaceGrid(8)
    with pytest.raises(ValueError):
        GridFunction(np.array([np.nan] * 8), g)
    with pytest.raises(GridMismatchError):
        GridFunction(np.zeros(7), g)
    with pytest.raises(ValueError):
        SpaceGrid(3)
    u = GridFunction(np.zeros(8), g)
    with pytest.raises(ValueError):
        u.values[0] = 1.0


def test_time_grid_covering():
    tg = TimeGrid.covering(0.1, 0.03)
    assert tg.steps == 4 and tg.dt == pytest.approx(0.025) and tg.dt <= 0.03
    assert tg.time(tg.steps) == 0.1
    assert TimeGrid.covering(0.0, 0.1).steps == 0


def test_fast_coords_exact():
    g = SpaceGrid(64)
    y = g.fast_coords(8)[0]
    assert y[8] == 0.0 and y[2] == 0.25 and y.max() < 1.0


@pytest.mark.parametrize("dim", [1, 2])
def test_csv_round_trip_bitwise(tmp_path, dim):
    g = SpaceGrid(8, dim)
    rng = np.random.default_rng(3)
    u = GridFunction(rng.normal(size=(2,) + g.shape) / 3.0, g, t=0.1)
    path = write_csv(u, tmp_path / "u.csv")
    v = read_csv(path)
    assert v.grid == g and v.t == 0.1
    np.testing.assert_array_equal(u.values, v.values)
    header = path.read_text().splitlines()[0]
    assert header == ("i,x1,value" if dim == 1 else "i,x1,x2,value")
