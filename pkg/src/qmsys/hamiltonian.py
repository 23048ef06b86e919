"""Pointwise min-max Hamiltonians and their monotone grid discretization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, SpaceGrid
from .scenario import ScenarioError, SystemSpec, coords_tuple, diffusion_from_sigma, eval_set


@dataclass(frozen=True)
class DiscreteOperatorConfig:
    """Upwind first differences, central second differences, extra viscosity.

    ``eps_visc`` adds ``-eps_visc * Laplacian`` outside the min-max.
    """

    eps_visc: float = 0.0
    upwind: bool = True
    stencil: str = "central"

    def __post_init__(self):
        if self.eps_visc < 0:
            raise ValueError("viscosity must be nonnegative")
        if not self.upwind or self.stencil != "central":
            raise ValueError("only the upwind / central-difference scheme is monotone here")


def hamiltonian_pointwise(spec: SystemSpec, i: int, t: float, x, r, p, X, y=None) -> float:
    """``min_zeta max_theta { -tr(A X) + b.p + l + d.r + kappa |p|^2 }`` by enumeration."""
    n = spec.dim
    r = np.asarray(r, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if r.size != spec.m or p.size != n or X.shape != (n, n):
        raise ValueError("dimension mismatch")
    if (y is None) == spec.has_fast:
        raise ScenarioError("fast-variable arity mismatch")
    xs = coords_tuple(x, n)
    ys = None if y is None else coords_tuple(y, n)
    nth, nze = spec.n_controls
    vals = np.empty((nth, nze))
    for a, b in spec.controls.pairs():
        sigma, drift, l, d, kappa = eval_set(spec.table[i][a][b], float(t), xs, ys)
        A = diffusion_from_sigma(np.asarray(sigma, dtype=float))
        v = -np.sum(A * X) + drift @ p + float(l) + d @ r
        if kappa is not None:
            v += float(kappa) * (p @ p)
        vals[a, b] = v
    return float(vals.max(axis=0).min())


class SampledSystem:
    """Coefficients of a control-form spec sampled on a grid at one time.

    Arrays carry axes ``(i, theta, zeta, ...)`` followed by grid axes.  Only
    the diagonal of ``A`` is kept; cross-diffusion is rejected.
    """

    def __init__(self, spec: SystemSpec, grid: SpaceGrid, t: float, inv_eps: int | None = None):
        if spec.form != "control_form":
            raise ValueError("general_form systems cannot be discretized in time")
        if spec.dim != grid.dim:
            raise ValueError("dimension mismatch between system and grid")
        if spec.has_fast and inv_eps is None:
            raise ScenarioError("fast-variable arity mismatch")
        x = grid.coords()
        y = grid.fast_coords(inv_eps) if spec.has_fast else None
        nth, nze = spec.n_controls
        shape = grid.shape
        dim = grid.dim
        self.A = np.empty((spec.m, nth, nze, dim) + shape)
        self.b = np.empty((spec.m, nth, nze, dim) + shape)
        self.l = np.empty((spec.m, nth, nze) + shape)
        self.d = np.empty((spec.m, nth, nze, spec.m) + shape)
        for i in range(spec.m):
            for a, bz in spec.controls.pairs():
                sigma, drift, l, d, _ = eval_set(spec.table[i][a][bz], t, x, y)
                A = diffusion_from_sigma(np.asarray(sigma))
                if dim == 2 and np.any(A[0, 1] != 0.0):
                    raise ValueError("unsupported cross-diffusion")
                for k in range(dim):
                    self.A[i, a, bz, k] = A[k, k]
                self.b[i, a, bz] = drift
                self.l[i, a, bz] = l
                self.d[i, a, bz] = d
        self.grid = grid
        self.bplus = np.maximum(self.b, 0.0)
        self.bminus = np.minimum(self.b, 0.0)
        self.single_control = nth == 1 and nze == 1

    @classmethod
    def from_arrays(cls, grid: SpaceGrid, A, b, l, d) -> "SampledSystem":
        """Build directly from arrays (used for effective problems)."""
        obj = cls.__new__(cls)
        obj.grid = grid
        obj.A, obj.b, obj.l, obj.d = (np.asarray(v, dtype=float) for v in (A, b, l, d))
        obj.bplus = np.maximum(obj.b, 0.0)
        obj.bminus = np.minimum(obj.b, 0.0)
        obj.single_control = obj.A.shape[1] == 1 and obj.A.shape[2] == 1
        return obj

    def max_step(self, eps_visc: float = 0.0) -> float:
        h = self.grid.h
        a_max = float(self.A.max(initial=0.0))
        b_sum = float(np.abs(self.b).sum(axis=3).max(initial=0.0))
        m = self.d.shape[0]
        d_diag = max(0.0, max(float(self.d[i, :, :, i].max()) for i in range(m)))
        return _cfl(h, self.grid.dim, a_max, b_sum, d_diag, eps_visc)

    def apply(self, u: np.ndarray, eps_visc: float = 0.0) -> np.ndarray:
        return apply_operator(self, u, eps_visc)


def _cfl(h, dim, a_max, b_sum, d_diag, eps_visc) -> float:
    denom = 2 * dim * (a_max + eps_visc) + h * b_sum + h * h * d_diag
    if denom == 0.0:
        return np.inf
    return h * h / denom


def cfl_timestep(spec: SystemSpec, h: float, config: DiscreteOperatorConfig = DiscreteOperatorConfig()) -> float:
    """Largest step keeping every explicit-Euler stencil weight nonnegative.

    Uses rigorous bounds of the trigonometric coefficients, so the step is
    valid at every time and for every fast scale.
    """
    if h <= 0:
        raise ValueError("spacing must be positive")
    return _cfl(h, spec.dim, spec.diffusion_bound(), spec.drift_bound(), spec.coupling_diag_bound(), config.eps_visc)


def _differences(u: np.ndarray, h: float, dim: int):
    """Second, backward and forward differences of arrays ``(m, *grid)``."""
    d2, dm, dp = [], [], []
    for k in range(dim):
        ax = k + 1
        up = np.roll(u, -1, axis=ax)
        dn = np.roll(u, 1, axis=ax)
        d2.append((up - 2.0 * u + dn) / (h * h))
        dm.append((u - dn) / h)
        dp.append((up - u) / h)
    return d2, dm, dp


def apply_operator(sys: SampledSystem, u: np.ndarray, eps_visc: float = 0.0) -> np.ndarray:
    """Discrete Hamiltonian at every node and component, shape ``(m, *grid)``."""
    dim = sys.grid.dim
    d2, dm, dp = _differences(u, sys.grid.h, dim)
    m = u.shape[0]
    out = np.empty_like(u)
    for i in range(m):
        # (theta, zeta, *grid)
        val = sys.l[i] + np.einsum("tzj...,j...->tz...", sys.d[i], u)
        for k in range(dim):
            val = val - sys.A[i, :, :, k] * d2[k][i] + sys.bplus[i, :, :, k] * dm[k][i] + sys.bminus[i, :, :, k] * dp[k][i]
        if sys.single_control:
            out[i] = val[0, 0]
        else:
            out[i] = val.max(axis=0).min(axis=0)
    if eps_visc:
        out -= eps_visc * sum(d2)
    return out


def discrete_hamiltonian(
    spec: SystemSpec,
    u: GridFunction,
    i: int,
    node,
    t: float,
    config: DiscreteOperatorConfig = DiscreteOperatorConfig(),
    inv_eps: int | None = None,
) -> float:
    """Discrete Hamiltonian of component ``i`` at one node index."""
    sys = SampledSystem(spec, u.grid, t, inv_eps)
    node = (node,) if np.ndim(node) == 0 else tuple(node)
    return float(apply_operator(sys, u.values, config.eps_visc)[(i,) + node])


class AveragedSystem:
    """Effective operator with control-free averaged diffusion and a
    cell-averaged min-max lower-order part.

    ``b``: ``(m, nth, nze, ncell, dim, *grid)``, ``l``: ``(m, nth, nze, ncell, *grid)``,
    ``d``: ``(m, nth, nze, ncell, m, *grid)``, ``weights``: ``(m, ncell, *grid)``
    summing to one over the cell axis, ``A_bar``: ``(m, dim, *grid)``.
    Every cell node contributes a monotone upwind term, so the weighted sum
    is monotone as well.
    """

    def __init__(self, grid: SpaceGrid, A_bar, b, l, d, weights):
        self.grid = grid
        self.A_bar = np.asarray(A_bar, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.l = np.asarray(l, dtype=float)
        self.d = np.asarray(d, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.bplus = np.maximum(self.b, 0.0)
        self.bminus = np.minimum(self.b, 0.0)

    def max_step(self, eps_visc: float = 0.0) -> float:
        m = self.d.shape[0]
        a_max = float(self.A_bar.max(initial=0.0))
        b_sum = float(np.abs(self.b).sum(axis=4).max(initial=0.0))
        d_diag = max(0.0, max(float(self.d[i, :, :, :, i].max()) for i in range(m)))
        return _cfl(self.grid.h, self.grid.dim, a_max, b_sum, d_diag, eps_visc)

    def apply(self, u: np.ndarray, eps_visc: float = 0.0) -> np.ndarray:
        dim = self.grid.dim
        d2, dm, dp = _differences(u, self.grid.h, dim)
        out = np.empty_like(u)
        for i in range(u.shape[0]):
            val = self.l[i] + np.einsum("tzcj...,j...->tzc...", self.d[i], u)
            for k in range(dim):
                val = val + self.bplus[i, :, :, :, k] * dm[k][i] + self.bminus[i, :, :, :, k] * dp[k][i]
            F = val.max(axis=0).min(axis=0)
            out[i] = (self.weights[i] * F).sum(axis=0)
            for k in range(dim):
                out[i] -= self.A_bar[i, k] * d2[k][i]
        if eps_visc:
            out -= eps_visc * sum(d2)
        return out
