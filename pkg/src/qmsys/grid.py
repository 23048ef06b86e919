"""Periodic grids, grid functions and the discrete norms used by the checks."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform grid on the unit torus with ``n`` nodes per axis, ``x_k = k/n``."""

    n: int
    dim: int = 1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise ValueError("grid needs at least 4 nodes per axis")
        if self.dim not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def indices(self) -> tuple[np.ndarray, ...]:
        """Integer node indices per axis, broadcast to the grid shape."""
        k = np.arange(self.n)
        if self.dim == 1:
            return (k,)
        return tuple(np.meshgrid(k, k, indexing="ij"))

    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(k / self.n for k in self.indices())

    def fast_coords(self, inv_eps: int) -> tuple[np.ndarray, ...]:
        """Exact fast coordinates ``x/eps mod 1`` for ``1/eps = inv_eps``."""
        return tuple(np.mod(inv_eps * k, self.n) / self.n for k in self.indices())


@dataclass(frozen=True)
class TimeGrid:
    T: float
    dt: float
    steps: int

    @classmethod
    def covering(cls, T: float, dt_max: float) -> "TimeGrid":
        """Fewest uniform steps reaching ``T`` with step at most ``dt_max``."""
        if T < 0 or dt_max <= 0:
            raise ValueError("need T >= 0 and a positive step bound")
        if T == 0:
            return cls(0.0, dt_max, 0)
        steps = max(1, math.ceil(T / dt_max))
        while T / steps > dt_max:
            steps += 1
        return cls(float(T), T / steps, steps)

    def time(self, k: int) -> float:
        return self.T if k == self.steps else k * self.dt


class GridFunction:
    """``m`` component arrays on a :class:`SpaceGrid` at time ``t``."""

    __slots__ = ("values", "grid", "t")

    def __init__(self, values, grid: SpaceGrid, t: float = 0.0):
        values = np.array(values, dtype=float)
        if values.ndim == grid.dim:
            values = values[None]
        if values.shape[1:] != grid.shape:
            raise GridMismatchError(f"values of shape {values.shape} do not fit grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        values.setflags(write=False)
        self.values = values
        self.grid = grid
        self.t = float(t)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def __repr__(self):
        return f"GridFunction(m={self.m}, N={self.grid.n}, dim={self.grid.dim}, t={self.t})"

    def with_values(self, values) -> "GridFunction":
        return GridFunction(values, self.grid, self.t)


def sample_fields(fields, grid: SpaceGrid, t: float = 0.0) -> GridFunction:
    """Node sampling of coefficient fields of ``x`` (e.g. an initial datum)."""
    x = grid.coords()
    return GridFunction(np.stack([np.broadcast_to(f(t, x), grid.shape) for f in fields]), grid, t)


def sup_norm(u: GridFunction) -> float:
    return float(np.abs(u.values).max())


def _check_same(u: GridFunction, v: GridFunction) -> None:
    if u.grid != v.grid or u.m != v.m:
        raise GridMismatchError("grid functions live on different grids")


def difference_norms(u: GridFunction, v: GridFunction) -> dict:
    _check_same(u, v)
    per = np.abs(u.values - v.values).reshape(u.m, -1).max(axis=1)
    return {"sup": float(per.max()), "components": [float(c) for c in per]}


EXACT_PAIR_LIMIT = 64**4
SAMPLED_SHIFTS = 4096


def holder_is_sampled(grid: SpaceGrid) -> bool:
    return grid.size**2 > EXACT_PAIR_LIMIT


def _shifts(grid: SpaceGrid) -> np.ndarray:
    n = grid.n
    if grid.dim == 1:
        return np.arange(1, n // 2 + 1)[:, None]
    # symmetric under negation, so half the shift plane suffices
    full = np.array([(a, b) for a in range(n) for b in range(n) if (a, b) != (0, 0)])
    if not holder_is_sampled(grid):
        return full
    near = full[np.abs(((full + n // 2) % n) - n // 2).max(axis=1) <= 8]
    rng = np.random.default_rng(0)
    far = full[rng.choice(len(full), size=min(SAMPLED_SHIFTS, len(full)), replace=False)]
    return np.unique(np.concatenate([near, far]), axis=0)


def holder_seminorm(u: GridFunction, mu: float) -> float:
    """Max of ``|u_i(x) - u_i(y)| / d(x, y)^mu`` over node pairs, torus metric.

    Exact in 1D and for small 2D grids; larger 2D grids use a fixed-seed
    subset of shifts (all short shifts included), giving a lower bound.
    """
    if not 0.0 < mu <= 1.0:
        raise ValueError("Hoelder exponent must lie in (0, 1]")
    grid = u.grid
    n = grid.n
    axes = tuple(range(1, grid.dim + 1))
    best = 0.0
    for s in _shifts(grid):
        wrapped = np.minimum(s, n - s) / n
        dist = float(np.sqrt(np.sum(wrapped**2)))
        diff = np.abs(u.values - np.roll(u.values, tuple(int(c) for c in s), axis=axes)).max()
        best = max(best, float(diff) / dist**mu)
    return best


def restrict(u: GridFunction, coarse: SpaceGrid) -> GridFunction:
    """Injection onto a coarser nested grid."""
    if coarse.dim != u.grid.dim or u.grid.n % coarse.n:
        raise GridMismatchError("grids are not nested")
    stride = u.grid.n // coarse.n
    sl = (slice(None),) + (slice(None, None, stride),) * coarse.dim
    return GridFunction(u.values[sl], coarse, u.t)


def fmt_float(v) -> str:
    """Fixed 17-significant-digit rendering; round-trips every double."""
    return format(float(v), ".17g")


def write_csv(u: GridFunction, path: str | Path) -> Path:
    """Write ``i,x1[,x2],value`` rows plus a JSON sidecar ``{N, dim, m, t}``."""
    path = Path(path)
    coords = u.grid.coords()
    header = ["i"] + [f"x{k + 1}" for k in range(u.grid.dim)] + ["value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        flat = [c.ravel() for c in coords]
        for i in range(u.m):
            vals = u.values[i].ravel()
            for k in range(vals.size):
                w.writerow([i] + [fmt_float(c[k]) for c in flat] + [fmt_float(vals[k])])
    meta = {"N": u.grid.n, "dim": u.grid.dim, "m": u.m, "t": u.t}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return path


def read_csv(path: str | Path) -> GridFunction:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = SpaceGrid(meta["N"], meta["dim"])
    values = np.empty((meta["m"],) + grid.shape)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    per = grid.size
    for i in range(meta["m"]):
        values[i] = np.array([float(r[-1]) for r in rows[i * per:(i + 1) * per]]).reshape(grid.shape)
    return GridFunction(values, grid, meta["t"])
