"""Studies built on the solver: vanishing viscosity, continuous dependence and
periodic homogenization, plus the time marching of effective problems."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cell import (
    DEFAULT_LAMBDAS,
    CellError,
    CellProblemInstance,
    _cell_grid,
    cell_diffusion,
    diffusion_has_space,
    ergodic_batch,
    invariant_measures,
)
from .estimates import RateFit, fit_rate
from .grid import GridFunction, SpaceGrid, fmt_float, restrict, sample_fields
from .hamiltonian import AveragedSystem, DiscreteOperatorConfig, SampledSystem, _cfl, _differences, cfl_timestep
from .scenario import ScenarioError, SystemSpec, eval_set
from .solver import SolverError, Trajectory, _time_grid, integrate, inverse_epsilon, snapshot_steps, solve_parabolic

REPORT_COLUMNS = ["study", "scenario", "param", "error", "fitted_exponent", "residual", "pass"]


@dataclass
class ExperimentRow:
    param: float
    error: float
    extra: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    study: str
    scenario: str
    rows: list
    fit: RateFit | None
    passed: bool
    details: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @property
    def errors(self) -> list[float]:
        return [r.error for r in self.rows]

    @property
    def params(self) -> list[float]:
        return [r.param for r in self.rows]

    def csv_rows(self) -> list[dict]:
        exp = "" if self.fit is None else fmt_float(self.fit.exponent)
        res = "" if self.fit is None else fmt_float(self.fit.residual)
        return [
            {
                "study": self.study,
                "scenario": self.scenario,
                "param": fmt_float(r.param),
                "error": fmt_float(r.error),
                "fitted_exponent": exp,
                "residual": res,
                "pass": int(self.passed),
            }
            for r in self.rows
        ]

    def write(self, path, include_timing: bool = True) -> Path:
        """CSV table plus a ``.manifest.json`` sidecar."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.csv_rows())
        manifest = dict(self.manifest)
        if not include_timing:
            manifest.pop("wall_time", None)
        path.with_suffix(".manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
        return path


def parse_fraction(value) -> Fraction:
    """Exact rational from ``"1/8"``, ``"0.125"``, a number or a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(str(value).strip())


def _decreasing(values, name: str, min_len: int = 1, allow_zero: bool = False) -> list[Fraction]:
    vals = [parse_fraction(v) for v in values]
    if len(vals) < min_len:
        raise ValueError(f"{name} list needs at least {min_len} entries")
    if any(v < 0 or (v == 0 and not allow_zero) for v in vals):
        raise ValueError(f"{name} list must be positive")
    if any(b >= a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"{name} list not decreasing")
    return vals


def _pmap(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map, optionally on a thread pool (results never depend on it)."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sup_diff(u: GridFunction, v: GridFunction) -> float:
    return float(np.abs(u.values - v.values).max())


# ---------------------------------------------------------------------------
# Vanishing viscosity
# ---------------------------------------------------------------------------


def vanishing_viscosity_study(
    spec: SystemSpec, eps_list, grid: SpaceGrid, T: float, threads: int = 1
) -> ExperimentReport:
    """Error of the ``eps`` Laplacian regularization against ``eps = 0``.

    All runs share the grid, the initial datum and one time step (the CFL
    step of the largest ``eps``), so the differences come only from the
    added viscosity.  Passes when the fitted exponent is at least
    ``mu/2 - 0.1`` and every error sits below the fitted envelope
    ``C eps^(1/2)`` with ``C = prefactor * exp(residual)``.
    """
    eps = _decreasing(eps_list, "ε", min_len=3)
    if spec.has_fast:
        raise ScenarioError("vanishing viscosity study needs a system without fast variables")
    start = time.perf_counter()
    dt = cfl_timestep(spec, grid.h, DiscreteOperatorConfig(float(eps[0])))
    ref = solve_parabolic(spec, grid, T, dt=dt, n_snapshots=1)

    def run(e):
        return solve_parabolic(spec, grid, T, DiscreteOperatorConfig(float(e)), dt=dt, n_snapshots=1)

    sols = _pmap(run, eps, threads)
    errors = [_sup_diff(s.final, ref.final) for s in sols]
    fit = fit_rate(errors, [float(e) for e in eps])
    C = fit.prefactor * math.exp(fit.residual)
    envelope = [C * math.sqrt(float(e)) for e in eps]
    mu = spec.holder_mu
    exponent_ok = fit.exponent >= mu / 2 - 0.1
    envelope_ok = all(err <= env for err, env in zip(errors, envelope))
    rows = [ExperimentRow(float(e), err, {"envelope": env}) for e, err, env in zip(eps, errors, envelope)]
    manifest = {
        "study": "vanishing_viscosity",
        "scenario": spec.name,
        "N": grid.n,
        "dim": grid.dim,
        "T": float(T),
        "dt": ref.dt,
        "steps": ref.steps,
        "eps": [str(e) for e in eps],
        "wall_time": time.perf_counter() - start,
    }
    details = {"C": C, "mu": mu, "exponent_ok": exponent_ok, "envelope_ok": envelope_ok}
    return ExperimentReport("vanishing_viscosity", spec.name, rows, fit, exponent_ok and envelope_ok, details, manifest)


# ---------------------------------------------------------------------------
# Continuous dependence
# ---------------------------------------------------------------------------

PERTURBATION_KINDS = ("l", "b", "a", "d")


def perturb_spec(spec: SystemSpec, kind: str, delta: float) -> SystemSpec:
    """Constant bump of one coefficient family by ``delta``.

    ``l``: cost + delta; ``b``: every drift entry + delta; ``a``: sigma scaled
    by ``1 + delta``; ``d``: coupling + delta times the uniform generator
    (a discount when ``m = 1``), which keeps the generator convention.
    """
    if kind not in PERTURBATION_KINDS:
        raise ValueError(f"perturbation kind must be one of {PERTURBATION_KINDS}")
    delta = float(delta)
    if delta == 0.0:
        return spec
    m = spec.m

    def fn(i, a, b, cs):
        if kind == "l":
            return _replace_set(cs, cost=cs.cost.shifted(delta))
        if kind == "b":
            return _replace_set(cs, drift=tuple(f.shifted(delta) for f in cs.drift))
        if kind == "a":
            if delta <= -1.0:
                raise ValueError("diffusion scaling must stay positive")
            return _replace_set(cs, sigma=tuple(tuple(f.scaled(1.0 + delta) for f in row) for row in cs.sigma))
        off = delta / (m - 1) if m > 1 else 0.0
        coupling = tuple(f.shifted(delta if j == i else -off) for j, f in enumerate(cs.coupling))
        return _replace_set(cs, coupling=coupling)

    return spec.map_sets(fn).replace(name=f"{spec.name}+{kind}{delta!r}")


def _replace_set(cs, **changes):
    return dataclasses.replace(cs, **changes)


def continuous_dependence_sweep(
    spec: SystemSpec,
    kind: str,
    deltas,
    grid: SpaceGrid,
    T: float,
    threads: int = 1,
    fast_epsilon=None,
    tol: float = 0.15,
) -> ExperimentReport:
    """``|u1 - u2|(T)`` between ``spec`` and its ``delta`` perturbations.

    The predicted exponent is 1 for ``l`` and ``d`` and ``mu`` for ``b`` and
    ``a``.  A zero ``delta`` must give a zero error.  All runs share one step.
    """
    if spec.form != "control_form":
        raise ScenarioError("continuous dependence sweeps need a control_form system")
    if kind not in PERTURBATION_KINDS:
        raise ValueError(f"perturbation kind must be one of {PERTURBATION_KINDS}")
    ds = _decreasing(deltas, "δ", allow_zero=True)
    start = time.perf_counter()
    specs = [perturb_spec(spec, kind, float(d)) for d in ds]
    dt = min(cfl_timestep(s, grid.h) for s in [spec] + specs)
    base = solve_parabolic(spec, grid, T, dt=dt, fast_epsilon=fast_epsilon, n_snapshots=1)
    sols = _pmap(lambda s: solve_parabolic(s, grid, T, dt=dt, fast_epsilon=fast_epsilon, n_snapshots=1), specs, threads)
    errors = [_sup_diff(s.final, base.final) for s in sols]
    predicted = 1.0 if kind in ("l", "d") else spec.holder_mu
    pos = [(float(d), e) for d, e in zip(ds, errors) if d > 0 and e > 0]
    fit = fit_rate([e for _, e in pos], [d for d, _ in pos]) if len(pos) >= 3 else None
    zero_ok = all(e == 0.0 for d, e in zip(ds, errors) if d == 0)
    passed = fit is not None and abs(fit.exponent - predicted) <= tol and zero_ok
    rows = [ExperimentRow(float(d), e) for d, e in zip(ds, errors)]
    manifest = {
        "study": "continuous_dependence",
        "scenario": spec.name,
        "kind": kind,
        "N": grid.n,
        "dim": grid.dim,
        "T": float(T),
        "dt": dt,
        "steps": base.steps,
        "deltas": [str(d) for d in ds],
        "wall_time": time.perf_counter() - start,
    }
    details = {"predicted_exponent": predicted, "zero_ok": zero_ok}
    return ExperimentReport(f"cde_{kind}", spec.name, rows, fit, passed, details, manifest)


# ---------------------------------------------------------------------------
# Effective problems
# ---------------------------------------------------------------------------


def _product_coords(grid: SpaceGrid, cell: SpaceGrid):
    """Slow coordinates ``(1.., *grid)`` and fast ones ``(*cell, 1..)``."""
    pad_c = (1,) * cell.dim
    pad_g = (1,) * grid.dim
    xs = tuple(c.reshape(pad_c + grid.shape) for c in grid.coords())
    ys = tuple(c.reshape(cell.shape + pad_g) for c in cell.coords())
    return xs, ys


def _cell_weights(spec: SystemSpec, i: int, grid: SpaceGrid, cell: SpaceGrid) -> np.ndarray:
    """Invariant-measure weights ``(ncell, *grid or 1..)`` summing to one."""
    if diffusion_has_space(spec, i):
        x = np.stack([c.ravel() for c in grid.coords()], axis=1)
        A = cell_diffusion(spec, i, x, cell)
        mu, _, _ = invariant_measures(A, cell.h)
        w = mu.reshape(grid.size, -1)
        w = w / w.sum(axis=1, keepdims=True)
        return w.T.reshape((cell.size,) + grid.shape)
    A = cell_diffusion(spec, i, np.zeros((1, grid.dim)), cell)
    mu, _, _ = invariant_measures(A, cell.h)
    w = mu[0].ravel() / mu[0].sum()
    return w.reshape((cell.size,) + (1,) * grid.dim)


def measure_system(spec: SystemSpec, grid: SpaceGrid, cell: SpaceGrid | int | None = None):
    """Effective operator from invariant measures (control-free diffusion).

    Single-control systems collapse to averaged affine coefficients; min-max
    systems keep the lower-order part per cell node and average after the
    min-max.
    """
    if not spec.is_linear_cell:
        raise ValueError("the measure path needs a control-independent diffusion")
    cell = _cell_grid(spec, cell)
    m, dim = spec.m, grid.dim
    nth, nze = spec.n_controls
    xs, ys = _product_coords(grid, cell)
    full = cell.shape + grid.shape
    A_bar = np.empty((m, dim) + grid.shape)
    b = np.empty((m, nth, nze, cell.size, dim) + grid.shape)
    l = np.empty((m, nth, nze, cell.size) + grid.shape)
    d = np.empty((m, nth, nze, cell.size, m) + grid.shape)
    weights = np.empty((m, cell.size) + grid.shape)
    for i in range(m):
        w = _cell_weights(spec, i, grid, cell)
        weights[i] = np.broadcast_to(w, (cell.size,) + grid.shape)
        for a, bz in spec.controls.pairs():
            sigma, drift, li, di, _ = eval_set(spec.table[i][a][bz], 0.0, xs, ys)
            if a == 0 and bz == 0:
                if dim == 2 and np.any(sum(np.asarray(sigma[0][j]) * np.asarray(sigma[1][j]) for j in range(dim)) != 0.0):
                    raise ValueError("unsupported cross-diffusion")
                for k in range(dim):
                    akk = sum(np.broadcast_to(sigma[k][j], full) ** 2 for j in range(dim))
                    A_bar[i, k] = (weights[i] * akk.reshape((cell.size,) + grid.shape)).sum(axis=0)
            for k in range(dim):
                b[i, a, bz, :, k] = np.broadcast_to(drift[k], full).reshape((cell.size,) + grid.shape)
            l[i, a, bz] = np.broadcast_to(li, full).reshape((cell.size,) + grid.shape)
            for j in range(m):
                d[i, a, bz, :, j] = np.broadcast_to(di[j], full).reshape((cell.size,) + grid.shape)
    if nth == 1 and nze == 1:
        wb = weights[:, None, None]
        return SampledSystem.from_arrays(
            grid,
            A_bar[:, None, None],
            (wb[:, :, :, :, None] * b).sum(axis=3),
            (wb * l).sum(axis=3),
            (wb[:, :, :, :, None] * d).sum(axis=3),
        )
    return AveragedSystem(grid, A_bar, b, l, d, weights)


def lambda_system(
    spec: SystemSpec, grid: SpaceGrid, cell: SpaceGrid | int | None = None, lambdas=DEFAULT_LAMBDAS
) -> SampledSystem:
    """Affine effective coefficients read off extrapolated cell problems.

    Valid for single-control systems, where ``H_bar`` is affine in
    ``(r, p, X)``: ``l_bar = H_bar(0)``, ``d_bar_j = H_bar(e_j) - l_bar`` and so on.
    """
    if spec.n_controls != (1, 1) or spec.form != "control_form":
        raise ValueError("the lambda path needs a single-control control_form system")
    cell = _cell_grid(spec, cell)
    m, dim = spec.m, grid.dim
    depends = any(f.has_space for cs in spec.sets() for f in cs.fields())
    nodes = np.stack([c.ravel() for c in grid.coords()], axis=1) if depends else np.zeros((1, dim))
    probes = [("l", None)] + [("d", j) for j in range(m)] + [("b", k) for k in range(dim)] + [("a", k) for k in range(dim)]
    instances = []
    for i in range(m):
        for kind, j in probes:
            r = np.zeros(m)
            p = np.zeros(dim)
            X = np.zeros((dim, dim))
            if kind == "d":
                r[j] = 1.0
            elif kind == "b":
                p[j] = 1.0
            elif kind == "a":
                X[j, j] = 1.0
            instances += [CellProblemInstance(i, x, r, p, X) for x in nodes]
    H = ergodic_batch(spec, instances, lambdas, cell)[0].reshape(m, len(probes), len(nodes))
    shape = grid.shape if depends else (1,) * dim
    base = H[:, 0]

    def field_of(vals):
        return np.broadcast_to(vals.reshape(shape), grid.shape)

    A = np.empty((m, 1, 1, dim) + grid.shape)
    b = np.empty((m, 1, 1, dim) + grid.shape)
    l = np.empty((m, 1, 1) + grid.shape)
    d = np.empty((m, 1, 1, m) + grid.shape)
    for i in range(m):
        l[i, 0, 0] = field_of(base[i])
        for j in range(m):
            d[i, 0, 0, j] = field_of(H[i, 1 + j] - base[i])
        for k in range(dim):
            b[i, 0, 0, k] = field_of(H[i, 1 + m + k] - base[i])
            A[i, 0, 0, k] = field_of(base[i] - H[i, 1 + m + dim + k])
    return SampledSystem.from_arrays(grid, A, b, l, d)


class GeneralEffectiveOperator:
    """``H_bar`` on demand through memoized cell problems.

    Keys round ``(x, r, p, diag X)`` to ``resolution``; ``H_bar`` is
    evaluated at the rounded point so values never depend on the order of
    evaluation.  Gradients use central differences, which is monotone as long
    as ``h |b| / 2 <= nu``.
    """

    def __init__(
        self,
        spec: SystemSpec,
        grid: SpaceGrid,
        cell: SpaceGrid | int | None = None,
        lambdas=DEFAULT_LAMBDAS,
        resolution: float = 1e-3,
        cache_cap: int = 200_000,
    ):
        if spec.constants.nu <= 0:
            raise ValueError("the general effective path needs a uniformly elliptic system")
        if grid.h * spec.drift_bound() > 2.0 * spec.constants.nu:
            raise ValueError("effective grid too coarse for a monotone central scheme")
        self.spec = spec
        self.grid = grid
        self.cell = _cell_grid(spec, cell)
        self.lambdas = tuple(lambdas)
        self.resolution = float(resolution)
        self.cache_cap = int(cache_cap)
        self.cache: dict[tuple, float] = {}
        self.solves = 0

    def max_step(self, eps_visc: float = 0.0) -> float:
        s = self.spec
        return _cfl(self.grid.h, self.grid.dim, s.diffusion_bound(), s.drift_bound(), s.coupling_diag_bound(), eps_visc)

    def _keys(self, i: int, u: np.ndarray, d2, dc) -> np.ndarray:
        g = self.grid
        cols = [c.ravel() for c in g.coords()]
        cols += [u[j].ravel() for j in range(u.shape[0])]
        cols += [dc[k][i].ravel() for k in range(g.dim)]
        cols += [d2[k][i].ravel() for k in range(g.dim)]
        return np.rint(np.stack(cols, axis=1) / self.resolution).astype(np.int64)

    def _evaluate(self, i: int, keys: list[tuple]) -> None:
        missing = list(dict.fromkeys(k for k in keys if (i,) + k not in self.cache))
        if not missing:
            return
        if len(self.cache) + len(missing) > self.cache_cap:
            raise CellError("effective evaluation budget exceeded")
        dim, m = self.grid.dim, self.spec.m
        res = self.resolution
        instances = []
        for k in missing:
            v = np.asarray(k, dtype=float) * res
            x, r, p, X = v[:dim], v[dim:dim + m], v[dim + m:2 * dim + m], np.diag(v[2 * dim + m:])
            instances.append(CellProblemInstance(i, x, r, p, X))
        H = ergodic_batch(self.spec, instances, self.lambdas, self.cell)[0]
        self.solves += len(missing)
        for k, val in zip(missing, H):
            self.cache.setdefault((i,) + k, float(val))

    def apply(self, u: np.ndarray, eps_visc: float = 0.0) -> np.ndarray:
        g = self.grid
        d2, dm, dp = _differences(u, g.h, g.dim)
        dc = [[0.5 * (dm[k][i] + dp[k][i]) for i in range(u.shape[0])] for k in range(g.dim)]
        out = np.empty_like(u)
        for i in range(u.shape[0]):
            keys = [tuple(row) for row in self._keys(i, u, d2, dc).tolist()]
            self._evaluate(i, keys)
            out[i] = np.array([self.cache[(i,) + k] for k in keys]).reshape(g.shape)
        if eps_visc:
            out -= eps_visc * sum(d2)
        return out


EFFECTIVE_PATHS = ("measure", "lambda", "general")


def effective_problem_solver(
    spec: SystemSpec,
    grid: SpaceGrid,
    T: float,
    path: str = "auto",
    cell: SpaceGrid | int | None = None,
    lambdas=DEFAULT_LAMBDAS,
    dt: float | None = None,
    n_snapshots: int = 64,
    resolution: float = 1e-3,
    cache_cap: int = 200_000,
    u0: GridFunction | None = None,
) -> Trajectory:
    """March ``u_t + H_bar(x, u, Du, D2u) = 0`` with the same contract as
    :func:`solve_parabolic`.

    ``path``: ``"measure"`` (invariant measures), ``"lambda"`` (affine
    coefficients from cell problems, single control), ``"general"``
    (memoized cell problems) or ``"auto"`` (measure when the diffusion is
    control-free, general otherwise).
    """
    if spec.dim != grid.dim:
        raise SolverError("dimension mismatch between system and grid")
    if u0 is not None and (u0.grid != grid or u0.m != spec.m):
        raise SolverError("initial datum does not match grid or component count")
    if not spec.has_fast:
        traj = solve_parabolic(spec, grid, T, dt=dt, n_snapshots=n_snapshots, u0=u0)
        traj.manifest["path"] = "direct"
        return traj
    if spec.has_time:
        raise ValueError("time-dependent effective problems are not supported")
    if path == "auto":
        path = "measure" if spec.is_linear_cell else "general"
    if path == "measure":
        system = measure_system(spec, grid, cell)
    elif path == "lambda":
        system = lambda_system(spec, grid, cell, lambdas)
    elif path == "general":
        system = GeneralEffectiveOperator(spec, grid, cell, lambdas, resolution, cache_cap)
    else:
        raise ValueError(f"unknown effective path {path!r}")
    tgrid = _time_grid(system.max_step(), T, dt)
    if u0 is None:
        u0 = sample_fields(spec.u0, grid)
    start = time.perf_counter()
    times, frames = integrate(
        u0.values, grid, tgrid, lambda t: system, store=snapshot_steps(tgrid.steps, n_snapshots), time_dependent=False
    )
    manifest = {
        "scenario": spec.name,
        "path": path,
        "N": grid.n,
        "dim": grid.dim,
        "dt": tgrid.dt,
        "steps": tgrid.steps,
        "T": float(T),
        "eps_visc": 0.0,
        "eps_fast": None,
        "wall_time": time.perf_counter() - start,
    }
    if isinstance(system, GeneralEffectiveOperator):
        manifest["cell_solves"] = system.solves
    snaps = [GridFunction(f, grid, t) for t, f in zip(times, frames)]
    return Trajectory(times, snaps, tgrid.dt, tgrid.steps, manifest)


# ---------------------------------------------------------------------------
# Homogenization
# ---------------------------------------------------------------------------


def _compare_grid(grid: SpaceGrid, inv_min: int) -> SpaceGrid:
    n = math.gcd(grid.n, 16 * inv_min)
    return SpaceGrid(n if n >= 4 else grid.n, grid.dim)


def homogenization_study(
    spec: SystemSpec,
    eps_list,
    grid: SpaceGrid,
    T: float,
    path: str = "auto",
    effective_grid: SpaceGrid | None = None,
    reference: Callable[[float, tuple], np.ndarray] | None = None,
    cell: SpaceGrid | int | None = None,
    threads: int = 1,
    tol: float = 1e-12,
) -> ExperimentReport:
    """Errors of the oscillating problems against the effective one.

    Every ``eps`` run uses ``grid`` and one common step; errors are taken on
    the coarsest resolving grid (``16 / eps_max`` nodes per axis) by
    injection.  The effective problem runs on ``grid`` for the measure and
    lambda paths and on the comparison grid for the general path, unless
    ``effective_grid`` is given.  ``reference(t, x)`` optionally supplies a
    closed-form limit, reported as ``reference_error`` per row.
    """
    eps = _decreasing(eps_list, "ε")
    inv = [inverse_epsilon(e, grid) for e in eps]
    if grid.n < 16 * inv[-1]:
        raise ScenarioError("under-resolved fast scale: need N >= 16/eps_min")
    start = time.perf_counter()
    coarse = _compare_grid(grid, inv[0])
    if path == "auto":
        path = "measure" if spec.is_linear_cell else "general"
    if effective_grid is None:
        effective_grid = coarse if path == "general" else grid
    if coarse.n > effective_grid.n or effective_grid.n % coarse.n:
        raise ScenarioError("effective grid does not contain the comparison grid")
    dt = cfl_timestep(spec, grid.h)

    def run(e):
        fe = e if spec.has_fast else None
        return solve_parabolic(spec, grid, T, fast_epsilon=fe, dt=dt, n_snapshots=1)

    sols = _pmap(run, eps, threads)
    eff = effective_problem_solver(spec, effective_grid, T, path=path, cell=cell, n_snapshots=1)
    target = restrict(eff.final, coarse)
    ref_vals = None
    if reference is not None:
        ref_vals = np.broadcast_to(np.asarray(reference(T, coarse.coords()), dtype=float), (spec.m,) + coarse.shape)
    rows = []
    for e, s in zip(eps, sols):
        fine = restrict(s.final, coarse)
        extra = {}
        if ref_vals is not None:
            extra["reference_error"] = float(np.abs(fine.values - ref_vals).max())
        rows.append(ExperimentRow(float(e), _sup_diff(fine, target), extra))
    errors = [r.error for r in rows]
    if max(errors) <= tol:
        monotone = True
    else:
        monotone = all(b < a for a, b in zip(errors, errors[1:]))
    manifest = {
        "study": "homogenization",
        "scenario": spec.name,
        "N": grid.n,
        "dim": grid.dim,
        "T": float(T),
        "dt": dt,
        "eps": [str(e) for e in eps],
        "compare_N": coarse.n,
        "effective": {k: v for k, v in eff.manifest.items() if k != "wall_time"},
        "wall_time": time.perf_counter() - start,
    }
    details = {"path": path, "monotone": monotone}
    if ref_vals is not None:
        details["effective_reference_error"] = float(np.abs(target.values - ref_vals).max())
    return ExperimentReport("homogenization", spec.name, rows, None, monotone, details, manifest)
