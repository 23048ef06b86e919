"""Periodic cell problems, ergodic constants and invariant measures.

For a frozen slow point ``x`` and frozen ``(r, p, X)`` the discounted cell
problem on the unit cell reads

    lam v(y) + min_zeta max_theta { -sum_k A_kk(x, y) (X_kk + D2_k v) + G(y) } = 0,

where ``G`` collects every term that does not involve ``v``.  Its ergodic
constant is the limit of ``-lam v`` as ``lam -> 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridFunction, SpaceGrid
from .hamiltonian import hamiltonian_pointwise
from .scenario import SystemSpec, diffusion_from_sigma, eval_set

DEFAULT_LAMBDAS = (0.1, 0.05, 0.025)


class CellError(RuntimeError):
    pass


def default_cell_size(dim: int) -> int:
    return 128 if dim == 1 else 64


@dataclass(frozen=True)
class CellProblemInstance:
    i: int
    x: tuple
    r: tuple
    p: tuple
    X: tuple

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[0] != X.shape[1] or not np.allclose(X, X.T, atol=0.0, rtol=0.0):
            raise ValueError("X must be a symmetric matrix")
        object.__setattr__(self, "x", tuple(float(c) for c in np.atleast_1d(self.x)))
        object.__setattr__(self, "r", tuple(float(c) for c in np.atleast_1d(self.r)))
        object.__setattr__(self, "p", tuple(float(c) for c in np.atleast_1d(self.p)))
        object.__setattr__(self, "X", tuple(tuple(float(c) for c in row) for row in X))


def _check_instances(spec: SystemSpec, instances: Sequence[CellProblemInstance]) -> None:
    for inst in instances:
        if not 0 <= inst.i < spec.m:
            raise ValueError(f"component {inst.i} out of range")
        if len(inst.x) != spec.dim or len(inst.p) != spec.dim or len(inst.X) != spec.dim or len(inst.r) != spec.m:
            raise ValueError("dimension mismatch")


# ---------------------------------------------------------------------------
# Branch data
# ---------------------------------------------------------------------------


def _cell_axes(x: np.ndarray, cell: SpaceGrid):
    """Broadcastable slow coordinates ``(B, 1..)`` and cell coordinates."""
    pad = (1,) * cell.dim
    xs = tuple(x[:, k].reshape((-1,) + pad) for k in range(cell.dim))
    return xs, cell.coords()


def branch_data(spec: SystemSpec, instances: Sequence[CellProblemInstance], cell: SpaceGrid, t: float = 0.0):
    """Diagonal diffusion ``(B, nth, nze, dim, *cell)`` and constants ``G`` ``(B, nth, nze, *cell)``."""
    _check_instances(spec, instances)
    B = len(instances)
    dim = spec.dim
    nth, nze = spec.n_controls
    x = np.array([inst.x for inst in instances])
    r = np.array([inst.r for inst in instances])
    p = np.array([inst.p for inst in instances])
    X = np.array([inst.X for inst in instances])
    comp = np.array([inst.i for inst in instances])
    xs, ys = _cell_axes(x, cell)
    pad = (1,) * dim
    A = np.empty((B, nth, nze, dim) + cell.shape)
    G = np.empty((B, nth, nze) + cell.shape)
    for i in np.unique(comp):
        sel = comp == i
        xi = tuple(c[sel] for c in xs)
        for a, b in spec.controls.pairs():
            sigma, drift, l, d, kappa = eval_set(spec.table[i][a][b], t, xi, ys)
            Af = diffusion_from_sigma(np.asarray(sigma))
            if dim == 2 and np.any(Af[0, 1] != 0.0):
                raise ValueError("unsupported cross-diffusion")
            nsel = int(sel.sum())
            sub = (nsel,) + cell.shape
            g = np.broadcast_to(l, sub).copy()
            for k in range(dim):
                A[sel, a, b, k] = np.broadcast_to(Af[k, k], sub)
                g -= np.broadcast_to(Af[k, k], sub) * X[sel, k, k].reshape((-1,) + pad)
                g += np.broadcast_to(drift[k], sub) * p[sel, k].reshape((-1,) + pad)
            for j in range(spec.m):
                g += np.broadcast_to(d[j], sub) * r[sel, j].reshape((-1,) + pad)
            if kappa is not None:
                g += np.broadcast_to(kappa, sub) * (p[sel] ** 2).sum(axis=1).reshape((-1,) + pad)
            G[sel, a, b] = g
    return A, G


# ---------------------------------------------------------------------------
# Linear algebra for a fixed policy
# ---------------------------------------------------------------------------


def _second_differences(w: np.ndarray, h: float, dim: int) -> list[np.ndarray]:
    """Central second differences of ``w`` (batch axis first), per axis."""
    out = []
    for k in range(dim):
        ax = k + 1
        out.append((np.roll(w, -1, axis=ax) - 2.0 * w + np.roll(w, 1, axis=ax)) / (h * h))
    return out


def _bcast(c: np.ndarray, dim: int) -> np.ndarray:
    return c.reshape((-1,) + (1,) * dim)


def _split(v: np.ndarray, dim: int):
    c = v.reshape(v.shape[0], -1).mean(axis=1)
    return c, v - _bcast(c, dim)


def _cyclic_tridiagonal(lower, diag, upper, rhs):
    """Batched solve of periodic tridiagonal systems (rows along the last axis).

    Row ``k`` reads ``lower_k v_{k-1} + diag_k v_k + upper_k v_{k+1} = rhs_k``
    with indices taken mod ``n``; Sherman-Morrison removes the corners.
    """
    n = diag.shape[-1]
    alpha = lower[..., 0]  # couples row 0 to v_{n-1}
    beta = upper[..., n - 1]  # couples row n-1 to v_0
    gamma = -diag[..., 0]
    b = diag.copy()
    b[..., 0] = diag[..., 0] - gamma
    b[..., n - 1] = diag[..., n - 1] - alpha * beta / gamma
    u = np.zeros_like(rhs)
    u[..., 0] = gamma
    u[..., n - 1] = beta
    rhs2 = np.stack([rhs, u])
    c = np.empty_like(diag)
    d = np.empty_like(rhs2)
    c[..., 0] = upper[..., 0] / b[..., 0]
    d[..., 0] = rhs2[..., 0] / b[..., 0]
    for k in range(1, n):
        denom = b[..., k] - lower[..., k] * c[..., k - 1]
        c[..., k] = upper[..., k] / denom
        d[..., k] = (rhs2[..., k] - lower[..., k] * d[..., k - 1]) / denom
    sol = np.empty_like(d)
    sol[..., n - 1] = d[..., n - 1]
    for k in range(n - 2, -1, -1):
        sol[..., k] = d[..., k] - c[..., k] * sol[..., k + 1]
    y, z = sol[0], sol[1]
    fact = (y[..., 0] + alpha * y[..., n - 1] / gamma) / (1.0 + z[..., 0] + alpha * z[..., n - 1] / gamma)
    return y - fact[..., None] * z


def _solve_linear(A: np.ndarray, rhs: np.ndarray, lam: float, h: float, dim: int) -> np.ndarray:
    """Solve ``lam v - sum_k A_k D2_k v = rhs`` for every batch member."""
    if dim == 1:
        a = A[:, 0] / (h * h)
        return _cyclic_tridiagonal(-a, lam + 2.0 * a, -a, rhs)
    B = rhs.shape[0]
    n = rhs.shape[1]
    N = n * n
    idx = np.arange(N).reshape(n, n)
    rows = np.concatenate([idx.ravel()] * 5)
    cols = np.concatenate([
        idx.ravel(),
        np.roll(idx, -1, axis=0).ravel(),
        np.roll(idx, 1, axis=0).ravel(),
        np.roll(idx, -1, axis=1).ravel(),
        np.roll(idx, 1, axis=1).ravel(),
    ])
    out = np.empty_like(rhs)
    for bi in range(B):
        a1 = A[bi, 0].ravel() / (h * h)
        a2 = A[bi, 1].ravel() / (h * h)
        vals = np.concatenate([lam + 2 * a1 + 2 * a2, -a1, -a1, -a2, -a2])
        M = sp.csc_matrix((vals, (rows, cols)), shape=(N, N))
        out[bi] = spla.spsolve(M, rhs[bi].ravel()).reshape(n, n)
    return out


def _solve_split(A, rhs, lam, h, dim, rounds: int = 3):
    """Policy solve returning ``v = c + w`` with ``w`` of zero mean.

    Large discounted solutions are dominated by the constant ``c``; keeping
    ``w`` separate lets second differences be formed without the rounding
    noise of ``c``, which ``1/h^2`` would otherwise amplify.
    """
    c, w = _split(_solve_linear(A, rhs, lam, h, dim), dim)
    for _ in range(rounds):
        res = rhs - lam * _bcast(c, dim) - lam * w
        for k, d2 in enumerate(_second_differences(w, h, dim)):
            res = res + A[:, k] * d2
        dc, dw = _split(_solve_linear(A, res, lam, h, dim), dim)
        c = c + dc
        w = w + dw
    return c, w


# ---------------------------------------------------------------------------
# Nonlinear cell solves
# ---------------------------------------------------------------------------


def _branch_values(A, G, c, w, lam, h, dim):
    """``lam v - sum_k A_k D2_k v + G`` for every branch: ``(B, nth, nze, *cell)``."""
    d2 = _second_differences(w, h, dim)
    val = G + (lam * _bcast(c, dim) + lam * w)[:, None, None]
    for k in range(dim):
        val = val - A[:, :, :, k] * d2[k][:, None, None]
    return val


def cell_residual(A, G, c, w, lam, h, dim) -> np.ndarray:
    F = _branch_values(A, G, c, w, lam, h, dim).max(axis=1).min(axis=1)
    return np.abs(F).reshape(F.shape[0], -1).max(axis=1)


def _improve(old, values, axis, maximize):
    """Argmax/argmin along ``axis`` keeping the old choice on near-ties."""
    new = values.argmax(axis=axis) if maximize else values.argmin(axis=axis)
    new = np.expand_dims(new, axis)
    old_val = np.take_along_axis(values, old, axis=axis)
    new_val = np.take_along_axis(values, new, axis=axis)
    scale = 1e-12 * (1.0 + np.abs(new_val))
    keep = (old_val >= new_val - scale) if maximize else (old_val <= new_val + scale)
    return np.where(keep, old, new)


def solve_cells_howard(A, G, lam: float, h: float, dim: int, max_iter: int = 200):
    """Nested policy iteration: minimizing player outside, maximizing inside."""
    B = G.shape[0]
    cell = G.shape[3:]
    c = np.zeros(B)
    w = np.zeros((B,) + cell)
    vals = _branch_values(A, G, c, w, lam, h, dim)
    th = np.expand_dims(vals.argmax(axis=1), 1)  # (B, 1, nze, *cell)
    ze = np.expand_dims(np.take_along_axis(vals, th, axis=1).argmin(axis=2), 2)  # (B, 1, 1, *cell)
    for _outer in range(max_iter):
        for _inner in range(max_iter):
            th_z = np.take_along_axis(th, ze, axis=2)
            A_pol = np.take_along_axis(np.take_along_axis(A, th_z[:, :, :, None], axis=1), ze[:, :, :, None], axis=2)[:, 0, 0]
            G_pol = np.take_along_axis(np.take_along_axis(G, th_z, axis=1), ze, axis=2)[:, 0, 0]
            c, w = _solve_split(A_pol, -G_pol, lam, h, dim)
            vals = _branch_values(A, G, c, w, lam, h, dim)
            vals_z = np.take_along_axis(vals, np.broadcast_to(ze, (B, vals.shape[1], 1) + cell), axis=2)
            new_th_z = _improve(th_z, vals_z, axis=1, maximize=True)
            if np.array_equal(new_th_z, th_z):
                break
            np.put_along_axis(th, ze, new_th_z, axis=2)
        else:
            raise CellError("cell iteration stalled in the maximizing policy loop")
        th = np.expand_dims(vals.argmax(axis=1), 1)
        new_ze = _improve(ze, np.take_along_axis(vals, th, axis=1), axis=2, maximize=False)
        if np.array_equal(new_ze, ze):
            return c, w
        ze = new_ze
    raise CellError("cell iteration stalled in the minimizing policy loop")


def solve_cells_sweep(A, G, lam: float, h: float, dim: int, tol: float = 1e-9, max_sweeps: int = 10**6):
    """Explicit monotone fixed point ``v <- v - tau (lam v + H_h(v))``."""
    a_max = float(A.max(initial=0.0))
    tau = 1.0 / (lam + 2.0 * dim * a_max / (h * h))
    c = np.zeros(G.shape[0])
    w = np.zeros((G.shape[0],) + G.shape[3:])
    res = np.inf
    for _ in range(max_sweeps):
        F = _branch_values(A, G, c, w, lam, h, dim).max(axis=1).min(axis=1)
        res = float(np.abs(F).max())
        if res <= tol:
            return c, w
        dc, dw = _split(-tau * F, dim)
        c, w = c + dc, w + dw
    raise CellError(f"cell iteration stalled (residual {res:.3e} after {max_sweeps} sweeps)")


def solve_cells(A, G, lam: float, h: float, dim: int, method: str = "howard", tol: float = 1e-9):
    """Discounted cell solutions as ``(c, w, residual)`` with ``v = c + w``, ``mean(w) = 0``."""
    if lam <= 0:
        raise ValueError("discount must be positive")
    if method == "howard":
        c, w = solve_cells_howard(A, G, lam, h, dim)
    elif method == "sweep":
        c, w = solve_cells_sweep(A, G, lam, h, dim, tol)
    else:
        raise ValueError(f"unknown cell method {method!r}")
    res = cell_residual(A, G, c, w, lam, h, dim)
    if np.any(res > tol):
        raise CellError(f"cell iteration stalled (residual {float(res.max()):.3e})")
    return c, w, res


def _require_elliptic(spec: SystemSpec) -> None:
    if spec.constants.nu <= 0:
        raise ValueError("cell problems need a uniformly elliptic scenario")


def solve_approx_corrector(
    spec: SystemSpec,
    inst: CellProblemInstance,
    lam: float,
    cell: SpaceGrid | int | None = None,
    method: str = "howard",
    tol: float = 1e-9,
) -> GridFunction:
    """Discounted corrector ``v_lam`` on the cell grid."""
    _require_elliptic(spec)
    cell = _cell_grid(spec, cell)
    A, G = branch_data(spec, [inst], cell)
    c, w, _ = solve_cells(A, G, lam, cell.h, cell.dim, method, tol)
    return GridFunction(c[0] + w, cell)


def _cell_grid(spec: SystemSpec, cell) -> SpaceGrid:
    if cell is None:
        return SpaceGrid(default_cell_size(spec.dim), spec.dim)
    if isinstance(cell, SpaceGrid):
        if cell.dim != spec.dim:
            raise ValueError("dimension mismatch between system and cell grid")
        return cell
    return SpaceGrid(int(cell), spec.dim)


# ---------------------------------------------------------------------------
# Ergodic constants
# ---------------------------------------------------------------------------


def extrapolate_to_zero(params: Sequence[float], values: np.ndarray) -> np.ndarray:
    """Neville evaluation at 0 of the interpolating polynomial (leading axis: samples).

    With two samples this is first-order Richardson extrapolation; each
    extra sample removes one more power of the parameter.
    """
    x = np.asarray(params, dtype=float)
    P = [np.asarray(v, dtype=float) for v in values]
    n = len(P)
    for k in range(1, n):
        for j in range(n - 1, k - 1, -1):
            P[j] = (x[j] * P[j - 1] - x[j - k] * P[j]) / (x[j] - x[j - k])
    return P[-1]


@dataclass
class CorrectorSolution:
    instance: CellProblemInstance
    lambdas: tuple
    v_lambda: list
    H_bar: float
    corrector: GridFunction
    spreads: list
    residuals: list
    averages: list = field(default_factory=list)


def _check_schedule(lambdas) -> tuple:
    lam = tuple(float(v) for v in lambdas)
    if len(lam) < 3 or any(v <= 0 for v in lam) or any(b >= a for a, b in zip(lam, lam[1:])):
        raise ValueError("lambda schedule needs at least 3 strictly decreasing positive values")
    return lam


def _chunk_size(spec: SystemSpec, cell: SpaceGrid) -> int:
    # keeps each branch array near 32 MB
    nth, nze = spec.n_controls
    return max(1, 2**22 // (cell.size * nth * nze * spec.dim))


def ergodic_batch(
    spec: SystemSpec,
    instances: Sequence[CellProblemInstance],
    lambdas=DEFAULT_LAMBDAS,
    cell: SpaceGrid | int | None = None,
    method: str = "howard",
    chunk: int | None = None,
):
    """Extrapolated ergodic constants for many instances.

    Returns ``(H_bar (B,), spreads (B, L), c (B, L), w list of (B, *cell), residuals (B, L))``
    where ``v_lam = c[:, k] + w[k]`` and every ``w[k]`` has zero cell mean.
    """
    _require_elliptic(spec)
    lam = _check_schedule(lambdas)
    cell = _cell_grid(spec, cell)
    B = len(instances)
    consts = np.empty((B, len(lam)))
    spreads = np.empty((B, len(lam)))
    resid = np.empty((B, len(lam)))
    ws = [np.empty((B,) + cell.shape) for _ in lam]
    chunk = chunk or _chunk_size(spec, cell)
    for start in range(0, B, chunk):
        stop = min(start + chunk, B)
        A, G = branch_data(spec, instances[start:stop], cell)
        for k, lm in enumerate(lam):
            c, w, res = solve_cells(A, G, lm, cell.h, cell.dim, method)
            flat = w.reshape(stop - start, -1)
            consts[start:stop, k] = c
            spreads[start:stop, k] = lm * (flat.max(axis=1) - flat.min(axis=1))
            resid[start:stop, k] = res
            ws[k][start:stop] = w
    # -lam v averaged over the cell is -lam c since w has zero mean
    H = extrapolate_to_zero(lam, (-np.array(lam)[None, :] * consts).T)
    # lam * osc(v_lam) must shrink towards zero; a positive spread that grows
    # or stalls along the schedule means the cell problem is not ergodic
    growing = np.any(np.diff(spreads, axis=1) > 1e-12 * (1.0 + spreads[:, :-1]), axis=1)
    stalled = (spreads[:, -1] > 1e-9) & (spreads[:, -1] >= (1.0 - 1e-9) * spreads[:, -2])
    if np.any(growing | stalled):
        raise CellError("no ergodic limit detected")
    return H, spreads, consts, ws, resid


def effective_hamiltonian(
    spec: SystemSpec,
    inst: CellProblemInstance,
    lambdas=DEFAULT_LAMBDAS,
    cell: SpaceGrid | int | None = None,
    method: str = "howard",
) -> CorrectorSolution:
    """Ergodic constant of one instance with its normalized corrector."""
    cell = _cell_grid(spec, cell)
    lam = _check_schedule(lambdas)
    H, spreads, consts, ws, resid = ergodic_batch(spec, [inst], lam, cell, method)
    w_min = ws[-1][0]
    return CorrectorSolution(
        instance=inst,
        lambdas=lam,
        v_lambda=[GridFunction(consts[0, k] + ws[k][0], cell) for k in range(len(lam))],
        H_bar=float(H[0]),
        corrector=GridFunction(w_min - w_min.ravel()[0], cell),
        spreads=[float(v) for v in spreads[0]],
        residuals=[float(v) for v in resid[0]],
        averages=[float(-lm * consts[0, k]) for k, lm in enumerate(lam)],
    )


# ---------------------------------------------------------------------------
# Invariant measures and averaged coefficients
# ---------------------------------------------------------------------------


@dataclass
class InvariantMeasure:
    x: tuple
    density: GridFunction
    residual: float
    iterations: int


def _require_linear(spec: SystemSpec, i: int | None = None) -> None:
    if spec.form != "control_form" or not spec.diffusion_is_control_free(i):
        raise ValueError("invariant measures need a control-independent diffusion")
    _require_elliptic(spec)


def cell_diffusion(spec: SystemSpec, i: int, x: np.ndarray, cell: SpaceGrid, t: float = 0.0) -> np.ndarray:
    """Diagonal ``A_i(x, y)`` on the cell, shape ``(B, dim, *cell)``; ``x`` is ``(B, dim)``."""
    xs, ys = _cell_axes(np.atleast_2d(x), cell)
    sigma = eval_set(spec.table[i][0][0], t, xs, ys)[0]
    A = diffusion_from_sigma(np.asarray(sigma))
    if cell.dim == 2 and np.any(A[0, 1] != 0.0):
        raise ValueError("unsupported cross-diffusion")
    shape = (x.shape[0],) + cell.shape
    return np.stack([np.broadcast_to(A[k, k], shape) for k in range(cell.dim)], axis=1)


def diffusion_has_space(spec: SystemSpec, i: int) -> bool:
    """Whether the (control-free) diffusion of component ``i`` depends on ``x``."""
    return any(f.has_space for row in spec.table[i][0][0].sigma for f in row)


def adjoint_step(mu: np.ndarray, A: np.ndarray, tau: float, h: float) -> np.ndarray:
    """One step of ``mu <- mu - tau L^T mu`` with ``L = -sum_k A_k D2_k``."""
    out = mu.copy()
    for k in range(A.shape[1]):
        flux = A[:, k] * mu
        ax = k + 1
        out += tau * (np.roll(flux, -1, axis=ax) - 2.0 * flux + np.roll(flux, 1, axis=ax)) / (h * h)
    return out


def _adjoint_tau(A: np.ndarray, h: float) -> float:
    # half the largest monotone step keeps the chain lazy (no period-two modes)
    return h * h / (4.0 * float(A.reshape(A.shape[0], A.shape[1], -1).max(axis=2).sum(axis=1).max()))


def invariant_measures(
    A: np.ndarray,
    h: float,
    tol: float = 1e-10,
    max_iter: int = 5 * 10**6,
    check_every: int = 64,
    method: str = "power",
):
    """Densities (mean one) with ``L^T mu = 0`` for a batch of diagonal diffusions."""
    B = A.shape[0]
    cell = A.shape[2:]
    tau = _adjoint_tau(A, h)
    if method == "direct":
        mu = _direct_measures(A, h)
        it = 0
    elif method == "power":
        mu = np.ones((B,) + cell)
        it = 0
        while True:
            for _ in range(check_every - 1):
                mu = adjoint_step(mu, A, tau, h)
            new = adjoint_step(mu, A, tau, h)
            it += check_every
            change = float(np.abs(new - mu).max())
            mu = new
            if change <= tol:
                break
            if it >= max_iter:
                raise CellError(f"invariant measure iteration did not converge (change {change:.3e})")
    else:
        raise ValueError(f"unknown measure method {method!r}")
    mu = mu / mu.reshape(B, -1).mean(axis=1).reshape((-1,) + (1,) * len(cell))
    change = float(np.abs(adjoint_step(mu, A, tau, h) - mu).max())
    if np.any(mu < 0):
        raise CellError("invariant measure has negative entries")
    return mu, change, it


def _direct_measures(A: np.ndarray, h: float) -> np.ndarray:
    """Null vectors of ``L^T`` by a sparse solve with one equation replaced by the mass."""
    B = A.shape[0]
    cell = A.shape[2:]
    dim = len(cell)
    N = int(np.prod(cell))
    idx = np.arange(N).reshape(cell)
    out = np.empty((B,) + cell)
    for b in range(B):
        rows, cols, vals = [], [], []
        for k in range(dim):
            a = A[b, k].ravel() / (h * h)
            # (L^T mu)_j = -sum over neighbours of a_nb mu_nb + 2 a_j mu_j
            rows += [idx.ravel()] * 3
            cols += [idx.ravel(), np.roll(idx, -1, axis=k).ravel(), np.roll(idx, 1, axis=k).ravel()]
            vals += [2 * a, -np.roll(A[b, k], -1, axis=k).ravel() / (h * h), -np.roll(A[b, k], 1, axis=k).ravel() / (h * h)]
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tolil()
        M[0, :] = np.ones(N)
        rhs = np.zeros(N)
        rhs[0] = N
        out[b] = spla.spsolve(M.tocsc(), rhs).reshape(cell)
    return out


def invariant_measure(
    spec: SystemSpec, i: int, x, cell: SpaceGrid | int | None = None, tol: float = 1e-10, method: str = "power"
) -> InvariantMeasure:
    _require_linear(spec, i)
    cell = _cell_grid(spec, cell)
    xv = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    A = cell_diffusion(spec, i, xv, cell)
    mu, change, it = invariant_measures(A, cell.h, tol=tol, method=method)
    return InvariantMeasure(tuple(xv[0]), GridFunction(mu[0], cell), change, it)


@dataclass
class EffectiveCoefficients:
    """Averaged data at one slow point: ``a_bar`` per component plus cell weights."""

    spec: SystemSpec
    x: tuple
    cell: SpaceGrid
    a_bar: np.ndarray  # (m, dim, dim)
    weights: np.ndarray  # (m, *cell), sums to one per component

    def F_bar(self, r, p) -> np.ndarray:
        """Averaged lower-order part ``sum_y w(y) F_i(x, y, r, p)`` per component."""
        r = np.asarray(r, dtype=float)
        p = np.asarray(p, dtype=float)
        out = np.empty(self.spec.m)
        xs = tuple(np.float64(c) for c in self.x)
        ys = self.cell.coords()
        for i in range(self.spec.m):
            branch = []
            for a, b in self.spec.controls.pairs():
                _, drift, l, d, _ = eval_set(self.spec.table[i][a][b], 0.0, xs, ys)
                val = l + sum(drift[k] * p[k] for k in range(len(p))) + sum(d[j] * r[j] for j in range(len(r)))
                branch.append(np.broadcast_to(val, self.cell.shape))
            nth, nze = self.spec.n_controls
            F = np.array(branch).reshape((nth, nze) + self.cell.shape).max(axis=0).min(axis=0)
            out[i] = float((self.weights[i] * F).sum())
        return out

    def H_bar(self, i: int, r, p, X) -> float:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return float(-np.sum(self.a_bar[i] * X) + self.F_bar(r, p)[i])


def effective_linear_coeffs(
    spec: SystemSpec, x, cell: SpaceGrid | int | None = None, method: str = "power"
) -> EffectiveCoefficients:
    _require_linear(spec)
    cell = _cell_grid(spec, cell)
    xv = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    a_bar = np.zeros((spec.m, spec.dim, spec.dim))
    weights = np.empty((spec.m,) + cell.shape)
    for i in range(spec.m):
        A = cell_diffusion(spec, i, xv, cell)
        mu, _, _ = invariant_measures(A, cell.h, method=method)
        w = mu[0] / mu[0].sum()
        weights[i] = w
        for k in range(spec.dim):
            a_bar[i, k, k] = float((A[0, k] * w).sum())
    return EffectiveCoefficients(spec, tuple(xv[0]), cell, a_bar, weights)


def measure_hamiltonian_batch(
    spec: SystemSpec, instances: Sequence[CellProblemInstance], cell: SpaceGrid | int | None = None,
    method: str = "power",
) -> np.ndarray:
    """Ergodic constants through invariant measures, vectorized over instances."""
    _require_linear(spec)
    _check_instances(spec, instances)
    cell = _cell_grid(spec, cell)
    cache: dict[tuple, np.ndarray] = {}
    out = np.empty(len(instances))
    slow = [diffusion_has_space(spec, i) for i in range(spec.m)]
    chunk = _chunk_size(spec, cell)
    for start in range(0, len(instances), chunk):
        part = instances[start:start + chunk]
        _, G = branch_data(spec, part, cell)
        # G already holds -sum_k A_kk X_kk; the measure averages every branch-free part
        F = G.max(axis=1).min(axis=1)  # (B, *cell)
        for b, inst in enumerate(part):
            key = (inst.i, inst.x if slow[inst.i] else None)
            if key not in cache:
                Ab = cell_diffusion(spec, inst.i, np.array([inst.x]), cell)
                mu, _, _ = invariant_measures(Ab, cell.h, method=method)
                cache[key] = mu[0] / mu[0].sum()
            out[start + b] = float((cache[key] * F[b]).sum())
    return out


# ---------------------------------------------------------------------------
# Structural properties of the effective Hamiltonian
# ---------------------------------------------------------------------------


def effective_values(
    spec: SystemSpec,
    instances: Sequence[CellProblemInstance],
    method: str = "auto",
    cell: SpaceGrid | int | None = None,
    lambdas=DEFAULT_LAMBDAS,
) -> np.ndarray:
    """``H_bar_i(x, r, p, X)`` for each instance.

    ``method``: ``"measure"`` (control-free diffusion only), ``"cell"``
    (extrapolated discounted cell problems) or ``"auto"``.  Without fast
    dependence ``H_bar = H`` and the Hamiltonian is evaluated directly.
    """
    if not spec.has_fast:
        return np.array([hamiltonian_pointwise(spec, s.i, 0.0, s.x, s.r, s.p, s.X) for s in instances])
    if method == "auto":
        method = "measure" if spec.is_linear_cell else "cell"
    if method == "measure":
        return measure_hamiltonian_batch(spec, instances, cell)
    if method == "cell":
        return ergodic_batch(spec, instances, lambdas, cell)[0]
    raise ValueError(f"unknown effective method {method!r}")


@dataclass
class EffectivePropertiesReport:
    method: str
    samples: int
    lipschitz_C1: float
    lipschitz_bound: float
    lipschitz_violations: int
    nu_bar: float
    ellipticity_violations: int
    quasi_monotone_violations: int
    convexity_violations: int | None
    passed: bool


def _lipschitz_bound(spec: SystemSpec, p_max: float) -> float:
    """Structural Lipschitz constant of ``H`` for the distance
    ``|dr|_inf + |dp|_inf + max|dX|``; averaging cannot increase it."""
    bound = spec.coupling_row_bound() + spec.drift_bound() + spec.dim * spec.diffusion_bound()
    kappas = [cs.kappa.bound() for cs in spec.sets() if cs.kappa is not None]
    if kappas:
        bound += 2.0 * spec.dim * max(kappas) * p_max
    return bound


def check_effective_properties(
    spec: SystemSpec,
    budget: int = 10_000,
    seed: int = 0,
    method: str = "auto",
    cell: SpaceGrid | int | None = None,
    lambdas=DEFAULT_LAMBDAS,
    tol: float = 1e-6,
) -> EffectivePropertiesReport:
    """Sampled Lipschitz, ellipticity, quasi-monotonicity and (trivial ``Z``)
    convexity checks of ``H_bar``, ``budget`` base samples each."""
    if budget < 1:
        raise ValueError("sample budget must be positive")
    rng = np.random.default_rng(seed)
    m, n = spec.m, spec.dim
    R = max(1.0, spec.u0_bound())
    small = 0.1

    def sym(shape, scale):
        M = rng.uniform(-scale, scale, shape + (n, n))
        return 0.5 * (M + np.swapaxes(M, -1, -2))

    comp = rng.integers(0, m, budget)
    x = rng.random((budget, n))
    r = rng.uniform(-R, R, (budget, m))
    p = rng.uniform(-R, R, (budget, n))
    X = sym((budget,), R)
    dr = rng.uniform(-small, small, (budget, m))
    dp = rng.uniform(-small, small, (budget, n))
    dX = sym((budget,), small)
    s_ell = rng.uniform(small, 1.0, budget)
    # quasi-monotone pairs: r - s attains its nonnegative maximum at the component
    delta = rng.uniform(-R, R, (budget, m))
    delta[np.arange(budget), comp] = np.abs(delta).max(axis=1) + rng.uniform(0.0, R, budget)
    patterns = [np.array(bits, dtype=float) for bits in np.ndindex(*(2,) * m) if any(bits)]
    for k in range(min(budget, len(patterns) * m)):
        pat = patterns[k // m]
        if pat[comp[k]] == 1.0:
            delta[k] = pat
    convex = spec.convex
    r2 = rng.uniform(-R, R, (budget, m))
    p2 = rng.uniform(-R, R, (budget, n))
    X2 = sym((budget,), R)

    def batch(rr, pp, XX):
        return [CellProblemInstance(int(comp[k]), x[k], rr[k], pp[k], XX[k]) for k in range(budget)]

    eye = np.eye(n)
    groups = [
        batch(r, p, X),
        batch(r + dr, p + dp, X + dX),
        batch(r, p, X + s_ell[:, None, None] * eye),
        batch(r - delta, p, X),
    ]
    if convex:
        groups += [batch(r2, p2, X2), batch(0.5 * (r + r2), 0.5 * (p + p2), 0.5 * (X + X2))]
    flat = [inst for g in groups for inst in g]
    if method == "auto":
        method = "measure" if spec.is_linear_cell else "cell"
    vals = effective_values(spec, flat, method, cell, lambdas).reshape(len(groups), budget)
    H0 = vals[0]

    dist = np.abs(dr).max(axis=1) + np.abs(dp).max(axis=1) + np.abs(dX).reshape(budget, -1).max(axis=1)
    dH = np.abs(vals[1] - H0)
    bound = _lipschitz_bound(spec, R + small)
    lip_viol = int(np.sum(dH > bound * dist + tol))

    drop = (H0 - vals[2]) / (s_ell * n)
    ell_viol = int(np.sum(vals[2] > H0 - spec.constants.nu * s_ell * n + tol))

    top = delta[np.arange(budget), comp]
    qm_viol = int(np.sum(H0 - vals[3] < spec.gamma * top - tol))

    conv_viol = None
    if convex:
        conv_viol = int(np.sum(vals[5] > 0.5 * (H0 + vals[4]) + tol))

    passed = lip_viol == 0 and ell_viol == 0 and qm_viol == 0 and not conv_viol
    return EffectivePropertiesReport(
        method=method if spec.has_fast else "pointwise",
        samples=budget,
        lipschitz_C1=float((dH / dist).max()),
        lipschitz_bound=bound,
        lipschitz_violations=lip_viol,
        nu_bar=float(drop.min()),
        ellipticity_violations=ell_viol,
        quasi_monotone_violations=qm_viol,
        convexity_violations=conv_viol,
        passed=passed,
    )
