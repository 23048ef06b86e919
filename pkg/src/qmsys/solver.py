"""Explicit monotone time marching for the Cauchy problem on the torus."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .grid import GridFunction, SpaceGrid, TimeGrid, sample_fields, sup_norm
from .hamiltonian import DiscreteOperatorConfig, SampledSystem, cfl_timestep
from .scenario import ScenarioError, SystemSpec


class SolverError(RuntimeError):
    pass


@dataclass
class Trajectory:
    times: list[float]
    snapshots: list[GridFunction]
    dt: float
    steps: int
    manifest: dict = field(default_factory=dict)

    @property
    def final(self) -> GridFunction:
        return self.snapshots[-1]

    @property
    def grid(self) -> SpaceGrid:
        return self.snapshots[0].grid

    def at(self, t: float) -> GridFunction:
        """Stored snapshot at time ``t`` (to within half a step)."""
        k = int(np.argmin([abs(s - t) for s in self.times]))
        if abs(self.times[k] - t) > 0.5 * self.dt + 1e-12:
            raise SolverError(f"no snapshot stored near t={t}")
        return self.snapshots[k]


def inverse_epsilon(eps, grid: SpaceGrid) -> int:
    """Integer ``1/eps``; it must divide ``N`` so ``x/eps`` hits exact nodes."""
    inv = Fraction(eps).limit_denominator(10**6)
    inv = 1 / inv if inv else None
    if inv is None or inv.denominator != 1 or abs(float(inv) - 1.0 / float(eps)) > 1e-9:
        raise ScenarioError(f"fast scale {eps} is not the reciprocal of an integer")
    k = int(inv)
    if grid.n % k:
        raise ScenarioError(f"1/eps = {k} does not divide N = {grid.n}")
    return k


def snapshot_steps(steps: int, n_snapshots: int = 64, extra=()) -> list[int]:
    idx = {int(math.floor(j * steps / n_snapshots)) for j in range(n_snapshots)} | {steps}
    idx |= {min(max(int(k), 0), steps) for k in extra}
    return sorted(idx)


def integrate(
    u0: np.ndarray,
    grid: SpaceGrid,
    tgrid: TimeGrid,
    system_at: Callable[[float], SampledSystem],  # anything with .apply(u, eps)
    eps_visc: float = 0.0,
    store: list[int] | None = None,
    time_dependent: bool = True,
    monitor: Callable[[int, float, np.ndarray], None] | None = None,
) -> tuple[list[float], list[np.ndarray]]:
    """Forward Euler ``u <- u - dt H_h(u)``; returns stored (times, arrays)."""
    u = np.array(u0, dtype=float)
    store_set = set(store if store is not None else [tgrid.steps])
    times, frames = [], []
    if 0 in store_set:
        times.append(0.0)
        frames.append(u.copy())
    if monitor is not None:
        monitor(0, 0.0, u)
    sys = system_at(0.0)
    dt = tgrid.dt
    for k in range(tgrid.steps):
        t = k * dt
        if time_dependent and k:
            sys = system_at(t)
        u = u - dt * sys.apply(u, eps_visc)
        if not np.isfinite(u.sum()):
            raise SolverError(f"blow-up detected at step {k + 1}")
        tn = tgrid.time(k + 1)
        if monitor is not None:
            monitor(k + 1, tn, u)
        if k + 1 in store_set:
            times.append(tn)
            frames.append(u.copy())
    return times, frames


def _time_grid(spec_dt_max: float, T: float, dt: float | None) -> TimeGrid:
    if dt is None:
        return TimeGrid.covering(T, spec_dt_max)
    if dt <= 0:
        raise SolverError("time step must be positive")
    if dt > spec_dt_max * (1 + 1e-12):
        raise SolverError(f"requested step {dt} exceeds CFL bound {spec_dt_max}")
    return TimeGrid.covering(T, dt)


def solve_parabolic(
    spec: SystemSpec,
    grid: SpaceGrid,
    T: float,
    config: DiscreteOperatorConfig = DiscreteOperatorConfig(),
    fast_epsilon=None,
    dt: float | None = None,
    n_snapshots: int = 64,
    store_times=(),
    u0: GridFunction | None = None,
) -> Trajectory:
    """March ``u_t + H(u) = 0`` from the node sampling of ``spec.u0``.

    ``fast_epsilon`` evaluates fast-variable coefficients at ``y = x/eps``.
    Snapshots: at most ``n_snapshots`` uniform slices plus the final time,
    plus the steps nearest to ``store_times``.
    """
    if spec.form != "control_form":
        raise SolverError("time marching supports control_form systems only")
    if spec.dim != grid.dim:
        raise SolverError("dimension mismatch between system and grid")
    if spec.has_fast != (fast_epsilon is not None):
        raise ScenarioError("fast-variable arity mismatch")
    inv_eps = inverse_epsilon(fast_epsilon, grid) if fast_epsilon is not None else None
    if u0 is None:
        u0 = sample_fields(spec.u0, grid)
    elif u0.grid != grid or u0.m != spec.m:
        raise SolverError("initial datum does not match grid or component count")
    tgrid = _time_grid(cfl_timestep(spec, grid.h, config), T, dt)
    store = snapshot_steps(tgrid.steps, n_snapshots, [round(s / tgrid.dt) for s in store_times] if tgrid.steps else ())
    start = time.perf_counter()
    times, frames = integrate(
        u0.values,
        grid,
        tgrid,
        lambda t: SampledSystem(spec, grid, t, inv_eps),
        config.eps_visc,
        store,
        time_dependent=spec.has_time,
    )
    wall = time.perf_counter() - start
    manifest = {
        "scenario": spec.name,
        "N": grid.n,
        "dim": grid.dim,
        "dt": tgrid.dt,
        "steps": tgrid.steps,
        "T": float(T),
        "eps_visc": config.eps_visc,
        "eps_fast": None if fast_epsilon is None else float(fast_epsilon),
        "wall_time": wall,
    }
    snaps = [GridFunction(f, grid, t) for t, f in zip(times, frames)]
    return Trajectory(times, snaps, tgrid.dt, tgrid.steps, manifest)


@dataclass
class ComparisonReport:
    passed: bool
    max_violation: float
    checked_steps: int


def check_comparison(
    spec: SystemSpec,
    u0_low: GridFunction,
    u0_high: GridFunction,
    T: float,
    config: DiscreteOperatorConfig = DiscreteOperatorConfig(),
    fast_epsilon=None,
    tol: float = 1e-12,
) -> ComparisonReport:
    """Evolve ordered data with a common step and track ``max(u_low - u_high)``."""
    if u0_low.grid != u0_high.grid:
        raise SolverError("initial data on different grids")
    if np.any(u0_low.values > u0_high.values):
        raise SolverError("precondition violated: u0_low must not exceed u0_high")
    grid = u0_low.grid
    inv_eps = inverse_epsilon(fast_epsilon, grid) if fast_epsilon is not None else None
    tgrid = TimeGrid.covering(T, cfl_timestep(spec, grid.h, config))
    stacked = np.concatenate([u0_low.values, u0_high.values])
    m = spec.m

    def system_at(t):
        s = SampledSystem(spec, grid, t, inv_eps)
        return _pair_system(s, m)

    worst = [-np.inf]

    def monitor(k, t, u):
        worst[0] = max(worst[0], float((u[:m] - u[m:]).max()))

    integrate(stacked, grid, tgrid, system_at, config.eps_visc, store=[], time_dependent=spec.has_time, monitor=monitor)
    violation = max(worst[0], 0.0)
    return ComparisonReport(violation <= tol, violation, tgrid.steps)


def _pair_system(s: SampledSystem, m: int) -> SampledSystem:
    """Two uncoupled copies of ``s`` so one march advances both data."""
    zeros = np.zeros_like(s.d)
    d_top = np.concatenate([s.d, zeros], axis=3)
    d_bot = np.concatenate([zeros, s.d], axis=3)
    return SampledSystem.from_arrays(
        s.grid,
        np.concatenate([s.A, s.A]),
        np.concatenate([s.b, s.b]),
        np.concatenate([s.l, s.l]),
        np.concatenate([d_top, d_bot]),
    )


@dataclass
class BarrierReport:
    passed: bool
    max_excess: float
    C_tilde: float


def barrier_constant(spec: SystemSpec) -> float:
    """``L + 1 + C + L |u0|`` with ``L`` the coupling row bound and ``C = C^f``."""
    L = spec.coupling_row_bound()
    return L + 1.0 + spec.constants.C_sup + L * spec.u0_bound()


def check_barrier(
    spec: SystemSpec,
    grid: SpaceGrid,
    T: float,
    config: DiscreteOperatorConfig = DiscreteOperatorConfig(),
    fast_epsilon=None,
) -> BarrierReport:
    """Check ``-(|u0| + e^{Ct}) <= u <= |u0| + e^{Ct}`` at every step."""
    c = barrier_constant(spec)
    u0 = sample_fields(spec.u0, grid)
    norm0 = sup_norm(u0)
    inv_eps = inverse_epsilon(fast_epsilon, grid) if fast_epsilon is not None else None
    tgrid = TimeGrid.covering(T, cfl_timestep(spec, grid.h, config))
    worst = [-np.inf]

    def monitor(k, t, u):
        barrier = norm0 + math.exp(c * t)
        worst[0] = max(worst[0], float(np.abs(u).max()) - barrier)

    integrate(
        u0.values, grid, tgrid, lambda t: SampledSystem(spec, grid, t, inv_eps),
        config.eps_visc, store=[], time_dependent=spec.has_time, monitor=monitor,
    )
    return BarrierReport(worst[0] <= 0.0, worst[0], c)
