"""System descriptions for weakly coupled min-max parabolic systems.

A :class:`SystemSpec` holds, for every component ``i`` and control pair
``(theta, zeta)``, the coefficients of

    -tr(A X) + b.p + l + sum_j d_ij r_j + kappa |p|^2,    A = sigma sigma^T,

where every coefficient is an exactly evaluable trigonometric polynomial in
``(t, x)`` and, for homogenization scenarios, in the fast variable ``y``.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

TWO_PI = 2.0 * np.pi


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Coefficient fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mode:
    """One term ``amp * sin|cos(2 pi (kt t + kx.x + ky.y))``.

    Space and fast frequencies are integers so the field is 1-periodic in
    each of those coordinates; the time frequency may be any rational.
    """

    amp: float
    kind: str = "sin"
    kt: float = 0.0
    kx: tuple[int, ...] = ()
    ky: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise ScenarioError(f"unknown mode kind {self.kind!r}")
        object.__setattr__(self, "amp", float(self.amp))
        object.__setattr__(self, "kt", float(self.kt))
        object.__setattr__(self, "kx", tuple(int(k) for k in self.kx))
        object.__setattr__(self, "ky", tuple(int(k) for k in self.ky))


@dataclass(frozen=True)
class CoefficientField:
    """Finite trigonometric polynomial, optionally under a square root.

    ``root=True`` evaluates ``sqrt(poly)``; it lets a diffusion square root
    such as ``sqrt(2 + sin(2 pi y))`` be represented while ``A = sigma^2``
    stays an exact trigonometric polynomial.
    """

    const: float = 0.0
    modes: tuple[Mode, ...] = ()
    root: bool = False

    def __post_init__(self):
        object.__setattr__(self, "const", float(self.const))
        object.__setattr__(self, "modes", tuple(self.modes))
        if self.root and self.poly_lower() < 0.0:
            raise ScenarioError("square-root field has a negative radicand")

    # -- structure -----------------------------------------------------
    @property
    def has_time(self) -> bool:
        return any(md.kt != 0.0 for md in self.modes if md.amp != 0.0)

    @property
    def has_space(self) -> bool:
        return any(any(md.kx) for md in self.modes if md.amp != 0.0)

    @property
    def has_fast(self) -> bool:
        return any(any(md.ky) for md in self.modes if md.amp != 0.0)

    @property
    def space_dim(self) -> int:
        return max([len(md.kx) for md in self.modes] + [0])

    @property
    def fast_dim(self) -> int:
        return max([len(md.ky) for md in self.modes] + [0])

    def is_zero(self) -> bool:
        return self.const == 0.0 and all(md.amp == 0.0 for md in self.modes)

    def poly_upper(self) -> float:
        return self.const + sum(abs(md.amp) for md in self.modes)

    def poly_lower(self) -> float:
        return self.const - sum(abs(md.amp) for md in self.modes)

    def bound(self) -> float:
        """Rigorous upper bound of ``|field|`` over all arguments."""
        if self.root:
            return math.sqrt(max(self.poly_upper(), 0.0))
        return abs(self.const) + sum(abs(md.amp) for md in self.modes)

    def upper(self) -> float:
        if self.root:
            return math.sqrt(max(self.poly_upper(), 0.0))
        return self.poly_upper()

    # -- evaluation ----------------------------------------------------
    def __call__(self, t, x=(), y=None) -> np.ndarray:
        x = tuple(x)
        y = None if y is None else tuple(y)
        shapes = [np.shape(t)] + [np.shape(c) for c in x]
        if y is not None:
            shapes += [np.shape(c) for c in y]
        out = np.full(np.broadcast_shapes(*shapes), self.const, dtype=float)
        for md in self.modes:
            if md.amp == 0.0:
                continue
            arg = md.kt * np.asarray(t, dtype=float)
            for k, freq in enumerate(md.kx):
                if freq:
                    arg = arg + freq * np.asarray(x[k], dtype=float)
            if any(md.ky):
                if y is None:
                    raise ScenarioError("fast-variable arity mismatch")
                for k, freq in enumerate(md.ky):
                    if freq:
                        arg = arg + freq * np.asarray(y[k], dtype=float)
            # period reduction before scaling keeps quarter-period nodes exact
            arg = TWO_PI * np.mod(arg, 1.0)
            out = out + md.amp * (np.sin(arg) if md.kind == "sin" else np.cos(arg))
        if self.root:
            out = np.sqrt(np.maximum(out, 0.0))
        return out

    # -- algebra -------------------------------------------------------
    def scaled(self, c: float) -> "CoefficientField":
        if self.root:
            if c < 0:
                raise ScenarioError("cannot scale a square-root field by a negative number")
            c = c * c
        return CoefficientField(
            self.const * c,
            tuple(dataclasses.replace(md, amp=md.amp * c) for md in self.modes),
            self.root,
        )

    def shifted(self, c: float) -> "CoefficientField":
        if self.root:
            raise ScenarioError("cannot shift a square-root field")
        return CoefficientField(self.const + c, self.modes, False)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> Any:
        if not self.modes and not self.root:
            return self.const
        out: dict[str, Any] = {"const": self.const}
        if self.root:
            out["root"] = True
        if self.modes:
            out["modes"] = [_mode_to_dict(md) for md in self.modes]
        return out

    @classmethod
    def from_dict(cls, data: Any) -> "CoefficientField":
        if isinstance(data, (int, float)):
            return cls(float(data))
        if not isinstance(data, dict):
            raise ScenarioError(f"cannot parse coefficient field from {data!r}")
        modes = tuple(
            Mode(
                amp=md["amp"],
                kind=md.get("kind", "sin"),
                kt=md.get("kt", 0.0),
                kx=tuple(md.get("kx", ())),
                ky=tuple(md.get("ky", ())),
            )
            for md in data.get("modes", ())
        )
        return cls(data.get("const", 0.0), modes, bool(data.get("root", False)))


def _mode_to_dict(md: Mode) -> dict:
    out: dict[str, Any] = {"amp": md.amp, "kind": md.kind}
    if md.kt:
        out["kt"] = md.kt
    if md.kx:
        out["kx"] = list(md.kx)
    if md.ky:
        out["ky"] = list(md.ky)
    return out


def const(c: float) -> CoefficientField:
    return CoefficientField(float(c))


def trig(c: float = 0.0, *modes: Mode, root: bool = False) -> CoefficientField:
    return CoefficientField(float(c), tuple(modes), root)


def sin_mode(amp, *, kx=(), ky=(), kt=0.0) -> Mode:
    return Mode(amp, "sin", kt, tuple(kx), tuple(ky))


def cos_mode(amp, *, kx=(), ky=(), kt=0.0) -> Mode:
    return Mode(amp, "cos", kt, tuple(kx), tuple(ky))


ZERO = const(0.0)


# ---------------------------------------------------------------------------
# Controls, coefficient sets, system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlSet:
    """Finite control grids; labels index the coefficient table in order."""

    theta: tuple[str, ...]
    zeta: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(str(s) for s in self.theta))
        object.__setattr__(self, "zeta", tuple(str(s) for s in self.zeta))
        if not self.theta or not self.zeta:
            raise ScenarioError("control sets must be non-empty")
        if len(set(self.theta)) != len(self.theta) or len(set(self.zeta)) != len(self.zeta):
            raise ScenarioError("duplicate control labels")

    def theta_index(self, label) -> int:
        return _label_index(self.theta, label)

    def zeta_index(self, label) -> int:
        return _label_index(self.zeta, label)

    def pairs(self):
        return itertools.product(range(len(self.theta)), range(len(self.zeta)))


def _label_index(labels: tuple[str, ...], label) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if not 0 <= label < len(labels):
            raise ScenarioError(f"control index {label} out of range")
        return int(label)
    try:
        return labels.index(str(label))
    except ValueError:
        raise ScenarioError(f"unknown control label {label!r}") from None


@dataclass(frozen=True)
class CoefficientSet:
    sigma: tuple[tuple[CoefficientField, ...], ...]
    drift: tuple[CoefficientField, ...]
    cost: CoefficientField
    coupling: tuple[CoefficientField, ...]
    kappa: CoefficientField | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(tuple(row) for row in self.sigma))
        object.__setattr__(self, "drift", tuple(self.drift))
        object.__setattr__(self, "coupling", tuple(self.coupling))

    def fields(self) -> Iterable[CoefficientField]:
        for row in self.sigma:
            yield from row
        yield from self.drift
        yield self.cost
        yield from self.coupling
        if self.kappa is not None:
            yield self.kappa

    def diffusion_is_diagonal(self) -> bool:
        return all(
            self.sigma[a][b].is_zero()
            for a in range(len(self.sigma))
            for b in range(len(self.sigma))
            if a != b
        )


@dataclass(frozen=True)
class StructuralConstants:
    C_a: float = 0.0
    C_f: float = 0.0
    C_sup: float = 0.0
    nu: float = 0.0


@dataclass(frozen=True)
class SystemSpec:
    name: str
    m: int
    dim: int
    controls: ControlSet
    table: tuple[tuple[tuple[CoefficientSet, ...], ...], ...]  # [i][theta][zeta]
    u0: tuple[CoefficientField, ...]
    gamma: float = 0.0
    holder_mu: float = 1.0
    constants: StructuralConstants = field(default_factory=StructuralConstants)
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "table", tuple(tuple(tuple(z) for z in th) for th in self.table))
        object.__setattr__(self, "u0", tuple(self.u0))
        if self.m < 1:
            raise ScenarioError("component count must be at least 1")
        if self.dim not in (1, 2):
            raise ScenarioError("space dimension must be 1 or 2")
        if not 0.0 < self.holder_mu <= 1.0:
            raise ScenarioError("Hoelder exponent must lie in (0, 1]")
        if len(self.u0) != self.m:
            raise ScenarioError("initial datum needs one field per component")
        nth, nze = len(self.controls.theta), len(self.controls.zeta)
        if len(self.table) != self.m or any(
            len(th) != nth or any(len(z) != nze for z in th) for th in self.table
        ):
            raise ScenarioError("coefficient table incomplete for the declared controls")
        for cs in self.sets():
            if len(cs.sigma) != self.dim or any(len(r) != self.dim for r in cs.sigma):
                raise ScenarioError("sigma must be dim x dim")
            if len(cs.drift) != self.dim:
                raise ScenarioError("drift must have dim entries")
            if len(cs.coupling) != self.m:
                raise ScenarioError("coupling row must have m entries")
            for f in cs.fields():
                if f.space_dim > self.dim or f.fast_dim > self.dim:
                    raise ScenarioError("field frequency vector longer than dim")
        for f in self.u0:
            if f.has_fast or f.has_time or f.root:
                raise ScenarioError("initial datum must be a plain field of x")

    # -- structure -----------------------------------------------------
    def sets(self) -> Iterable[CoefficientSet]:
        for th in self.table:
            for z in th:
                yield from z

    def coefficient_set(self, i: int, theta, zeta) -> CoefficientSet:
        if not 0 <= i < self.m:
            raise ScenarioError(f"component {i} out of range")
        return self.table[i][self.controls.theta_index(theta)][self.controls.zeta_index(zeta)]

    @property
    def form(self) -> str:
        if any(cs.kappa is not None and not cs.kappa.is_zero() for cs in self.sets()):
            return "general_form"
        return "control_form"

    @property
    def has_fast(self) -> bool:
        return any(f.has_fast for cs in self.sets() for f in cs.fields())

    @property
    def has_time(self) -> bool:
        return any(f.has_time for cs in self.sets() for f in cs.fields())

    @property
    def n_controls(self) -> tuple[int, int]:
        return len(self.controls.theta), len(self.controls.zeta)

    @property
    def convex(self) -> bool:
        """Max over theta of affine maps only: trivial zeta set."""
        return len(self.controls.zeta) == 1

    def diffusion_is_control_free(self, i: int | None = None) -> bool:
        comps = range(self.m) if i is None else [i]
        for c in comps:
            ref = self.table[c][0][0].sigma
            for th in self.table[c]:
                for cs in th:
                    if cs.sigma != ref:
                        return False
        return True

    @property
    def is_linear_cell(self) -> bool:
        """Control-free diffusion and no quadratic term: averaging applies."""
        return self.form == "control_form" and self.diffusion_is_control_free()

    def replace(self, **changes) -> "SystemSpec":
        return dataclasses.replace(self, **changes)

    def map_sets(self, fn) -> "SystemSpec":
        """New spec with ``fn(i, theta_idx, zeta_idx, cset)`` applied to every entry."""
        table = tuple(
            tuple(
                tuple(fn(i, a, b, self.table[i][a][b]) for b in range(len(self.table[i][a])))
                for a in range(len(self.table[i]))
            )
            for i in range(self.m)
        )
        return dataclasses.replace(self, table=table)

    # -- bounds used by CFL and barrier constructions ---------------------
    def diffusion_bound(self) -> float:
        out = 0.0
        for cs in self.sets():
            for k in range(self.dim):
                out = max(out, sum(cs.sigma[k][j].bound() ** 2 for j in range(self.dim)))
        return out

    def drift_bound(self) -> float:
        return max(sum(f.bound() for f in cs.drift) for cs in self.sets())

    def coupling_diag_bound(self) -> float:
        out = 0.0
        for i, th in enumerate(self.table):
            for z in th:
                for cs in z:
                    out = max(out, cs.coupling[i].upper())
        return max(out, 0.0)

    def coupling_row_bound(self) -> float:
        return max(sum(f.bound() for f in cs.coupling) for cs in self.sets())

    def cost_bound(self) -> float:
        return max(cs.cost.bound() for cs in self.sets())

    def u0_bound(self) -> float:
        return max(f.bound() for f in self.u0)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientSample:
    A: np.ndarray
    a: np.ndarray
    b: np.ndarray
    l: float
    d: np.ndarray
    kappa: float = 0.0


def coords_tuple(x, dim: int) -> tuple:
    if np.ndim(x) == 0:
        x = (x,)
    x = tuple(np.asarray(c, dtype=float) for c in x)
    if len(x) != dim:
        raise ScenarioError(f"expected {dim} coordinates, got {len(x)}")
    return x


def eval_set(cs: CoefficientSet, t, x: tuple, y: tuple | None):
    """Vectorized evaluation; arrays carry the broadcast point shape last."""
    dim = len(cs.drift)
    sigma = np.stack(
        [np.stack([np.broadcast_to(cs.sigma[r][c](t, x, y), _shape(t, x, y)) for c in range(dim)])
         for r in range(dim)]
    )
    b = np.stack([np.broadcast_to(f(t, x, y), _shape(t, x, y)) for f in cs.drift])
    l = np.broadcast_to(cs.cost(t, x, y), _shape(t, x, y))
    d = np.stack([np.broadcast_to(f(t, x, y), _shape(t, x, y)) for f in cs.coupling])
    kappa = None
    if cs.kappa is not None:
        kappa = np.broadcast_to(cs.kappa(t, x, y), _shape(t, x, y))
    return sigma, b, l, d, kappa


def _shape(t, x, y):
    shapes = [np.shape(t)] + [np.shape(c) for c in x]
    if y is not None:
        shapes += [np.shape(c) for c in y]
    return np.broadcast_shapes(*shapes)


def diffusion_from_sigma(sigma: np.ndarray) -> np.ndarray:
    """``A = sigma sigma^T`` for arrays shaped ``(dim, dim, ...)``."""
    return np.einsum("ik...,jk...->ij...", sigma, sigma)


def eval_coefficients(spec: SystemSpec, i: int, theta, zeta, t: float, x, y=None) -> CoefficientSample:
    """Exact coefficient values of component ``i`` under controls ``(theta, zeta)``."""
    if (y is None) == spec.has_fast:
        raise ScenarioError("fast-variable arity mismatch")
    cs = spec.coefficient_set(i, theta, zeta)
    xs = coords_tuple(x, spec.dim)
    ys = None if y is None else coords_tuple(y, spec.dim)
    sigma, b, l, d, kappa = eval_set(cs, float(t), xs, ys)
    sigma = np.asarray(sigma, dtype=float)
    return CoefficientSample(
        A=diffusion_from_sigma(sigma),
        a=sigma,
        b=np.asarray(b, dtype=float),
        l=float(l),
        d=np.asarray(d, dtype=float),
        kappa=0.0 if kappa is None else float(kappa),
    )


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------


def _sample_points(spec: SystemSpec, n: int, rng: np.random.Generator, lattice: int = 0):
    """Rows of (t, x..., y...) sampled uniformly, optionally prefixed by a lattice."""
    ncoord = spec.dim * (2 if spec.has_fast else 1)
    pts = []
    if lattice:
        axes = [np.arange(lattice) / lattice] * ncoord
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ncoord)
        pts.append(np.column_stack([np.zeros(len(grid)), grid]))
    pts.append(rng.random((n, 1 + ncoord)))
    P = np.concatenate(pts)
    t = P[:, 0]
    x = tuple(P[:, 1 + k] for k in range(spec.dim))
    y = tuple(P[:, 1 + spec.dim + k] for k in range(spec.dim)) if spec.has_fast else None
    return t, x, y


@dataclass
class QuasiMonotonicityReport:
    passed: bool
    gamma_estimate: float
    witness: dict | None = None


def verify_quasi_monotonicity(
    spec: SystemSpec, samples: int = 256, seed: int = 0, tol: float = 1e-12
) -> QuasiMonotonicityReport:
    """Sampled check of ``f_j(r) - f_j(s) >= gamma (r_j - s_j)`` whenever
    ``r_j - s_j = max_k (r_k - s_k) >= 0``.

    Unit sign patterns are enumerated first (with ``s = 0``) so that a
    violating off-diagonal sign is reported with the simplest witness.
    """
    if samples < 1:
        raise ScenarioError("sample budget must be positive")
    rng = np.random.default_rng(seed)
    t, x, y = _sample_points(spec, samples, rng)
    m = spec.m
    R = max(1.0, spec.u0_bound())

    deltas = [np.eye(m)[j] for j in range(m)]
    deltas += [np.array(bits, dtype=float) for bits in itertools.product((0.0, 1.0), repeat=m) if any(bits)]
    pairs = [(d.copy(), np.zeros(m)) for d in deltas]
    s_rand = rng.uniform(-R, R, size=(samples, m))
    r_rand = s_rand + rng.uniform(-R, R, size=(samples, m))
    pairs += list(zip(r_rand, s_rand))

    gamma_est = math.inf
    witness = None
    for i in range(m):
        for a, b in spec.controls.pairs():
            cs = spec.table[i][a][b]
            d = np.stack([np.broadcast_to(f(t, x, y), t.shape) for f in cs.coupling])  # (m, P)
            for r, s in pairs:
                delta = r - s
                top = delta.max()
                if top < 0 or delta[i] != top:
                    continue
                diff = delta @ d  # f_i(r) - f_i(s) at every sampled point
                if top > 0:
                    gamma_est = min(gamma_est, float(diff.min() / top))
                viol = diff < spec.gamma * top - tol
                if witness is None and viol.any():
                    k = int(np.argmax(viol))
                    witness = {
                        "component": i,
                        "theta": spec.controls.theta[a],
                        "zeta": spec.controls.zeta[b],
                        "r": r.tolist(),
                        "s": s.tolist(),
                        "t": float(t[k]),
                        "x": [float(c[k]) for c in x],
                        "difference": float(diff[k]),
                    }
    if gamma_est is math.inf:
        gamma_est = 0.0
    return QuasiMonotonicityReport(witness is None, gamma_est, witness)


@dataclass
class EllipticityReport:
    passed: bool
    nu_estimate: float
    degenerate: bool


def verify_ellipticity(spec: SystemSpec, samples: int = 256, seed: int = 0, tol: float = 1e-12) -> EllipticityReport:
    if samples < 1:
        raise ScenarioError("sample budget must be positive")
    rng = np.random.default_rng(seed)
    ncoord = spec.dim * (2 if spec.has_fast else 1)
    lattice = 16 if ncoord <= 2 else 8
    t, x, y = _sample_points(spec, samples, rng, lattice=lattice)
    nu = math.inf
    for cs in spec.sets():
        sigma = eval_set(cs, t, x, y)[0]
        A = diffusion_from_sigma(sigma)  # (dim, dim, P)
        eig = np.linalg.eigvalsh(np.moveaxis(A, (0, 1), (-2, -1)))
        nu = min(nu, float(eig.min()))
    degenerate = nu <= tol
    return EllipticityReport(nu >= spec.constants.nu - tol, max(nu, 0.0) if degenerate else nu, degenerate)


@dataclass
class ConstantsReport:
    passed: bool
    C_a: float
    C_f: float
    C_sup: float
    R: float


def verify_constants(spec: SystemSpec, samples: int = 2048, seed: int = 0, R: float | None = None,
                     tol: float = 1e-9) -> ConstantsReport:
    """Finite-difference estimates of the moduli behind ``C_a``, ``C_f``, ``C^f``.

    With a fast variable, moduli are taken jointly in ``(x, y)``.  The
    quadratic ``kappa |p|^2`` part of general-form systems is excluded from
    the ``C_f`` estimate (it is not Lipschitz uniformly in ``p``).
    """
    rng = np.random.default_rng(seed)
    if R is None:
        R = spec.u0_bound() + spec.constants.C_sup
    t, x, y = _sample_points(spec, samples, rng)
    ncoord = len(x) + (len(y) if y is not None else 0)
    step = np.exp(rng.uniform(np.log(1e-4), np.log(0.25), size=samples))
    direction = rng.normal(size=(ncoord, samples))
    direction /= np.linalg.norm(direction, axis=0)
    shift = direction * step
    x2 = tuple(x[k] + shift[k] for k in range(len(x)))
    y2 = None if y is None else tuple(y[k] + shift[len(x) + k] for k in range(len(y)))
    dist = step
    pmag = rng.choice([0.0, 1.0, 10.0], size=samples)
    pdir = rng.normal(size=(spec.dim, samples))
    p = pdir / np.linalg.norm(pdir, axis=0) * pmag
    r = rng.uniform(-R, R, size=(spec.m, samples))

    C_a = C_f = C_sup = 0.0
    mu = spec.holder_mu
    for cs in spec.sets():
        s1, b1, l1, d1, _ = eval_set(cs, t, x, y)
        s2, b2, l2, d2, _ = eval_set(cs, t, x2, y2)
        dsig = np.sqrt(((s1 - s2) ** 2).sum(axis=(0, 1)))
        C_a = max(C_a, float((dsig / dist).max()))
        df = ((b1 - b2) * p).sum(axis=0) + (l1 - l2) + ((d1 - d2) * r).sum(axis=0)
        C_f = max(C_f, float((np.abs(df) / (pmag * dist + dist**mu)).max()))
        C_sup = max(C_sup, float(np.abs(l1).max()))
    c = spec.constants
    ok = C_a <= c.C_a + tol and C_f <= c.C_f + tol and C_sup <= c.C_sup + tol
    return ConstantsReport(ok, C_a, C_f, C_sup, R)


def coupling_issues(spec: SystemSpec) -> list[str]:
    """Violations of the generator convention (d_ij <= 0 off the diagonal, zero row sums)."""
    issues = []
    for i, th in enumerate(spec.table):
        for a, z in enumerate(th):
            for b, cs in enumerate(z):
                tag = f"component {i}, controls ({spec.controls.theta[a]}, {spec.controls.zeta[b]})"
                for j, f in enumerate(cs.coupling):
                    if j != i and f.upper() > 0.0:
                        issues.append(f"{tag}: d[{i}][{j}] may be positive")
                if not _sums_to_zero(cs.coupling):
                    issues.append(f"{tag}: coupling row does not sum to zero")
    return issues


def _sums_to_zero(fields: Sequence[CoefficientField]) -> bool:
    if any(f.root for f in fields):
        return False
    total = sum(f.const for f in fields)
    acc: dict[tuple, float] = {}
    for f in fields:
        for md in f.modes:
            key = (md.kind, md.kt, md.kx + (0,) * (2 - len(md.kx)), md.ky + (0,) * (2 - len(md.ky)))
            acc[key] = acc.get(key, 0.0) + md.amp
    return total == 0.0 and all(v == 0.0 for v in acc.values())


def validate_spec(spec: SystemSpec, samples: int = 256, seed: int = 0) -> None:
    """Raise :class:`ScenarioError` unless all structural assumptions hold."""
    problems = coupling_issues(spec)
    qm = verify_quasi_monotonicity(spec, samples, seed)
    if not qm.passed:
        problems.append(f"quasi-monotonicity fails: {qm.witness}")
    if spec.constants.nu > 0:
        el = verify_ellipticity(spec, samples, seed)
        if not el.passed:
            problems.append(f"ellipticity {el.nu_estimate} below declared {spec.constants.nu}")
    cr = verify_constants(spec, seed=seed)
    if not cr.passed:
        problems.append(
            f"declared constants do not dominate estimates (C_a={cr.C_a:.4g}, C_f={cr.C_f:.4g}, C_sup={cr.C_sup:.4g})"
        )
    if problems:
        raise ScenarioError(f"scenario {spec.name!r} invalid: " + "; ".join(problems))


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------


def spec_to_dict(spec: SystemSpec) -> dict:
    coefficients = []
    for i in range(spec.m):
        for a, b in spec.controls.pairs():
            cs = spec.table[i][a][b]
            entry = {
                "component": i,
                "theta": spec.controls.theta[a],
                "zeta": spec.controls.zeta[b],
                "sigma": [[f.to_dict() for f in row] for row in cs.sigma],
                "drift": [f.to_dict() for f in cs.drift],
                "cost": cs.cost.to_dict(),
                "coupling": [f.to_dict() for f in cs.coupling],
            }
            if cs.kappa is not None:
                entry["kappa"] = cs.kappa.to_dict()
            coefficients.append(entry)
    c = spec.constants
    return {
        "name": spec.name,
        "description": spec.description,
        "m": spec.m,
        "dim": spec.dim,
        "form": spec.form,
        "controls": {"theta": list(spec.controls.theta), "zeta": list(spec.controls.zeta)},
        "gamma": spec.gamma,
        "mu": spec.holder_mu,
        "constants": {"C_a": c.C_a, "C_f": c.C_f, "C_sup": c.C_sup, "nu": c.nu},
        "u0": [f.to_dict() for f in spec.u0],
        "coefficients": coefficients,
    }


def spec_from_dict(data: dict) -> SystemSpec:
    try:
        m, dim = int(data["m"]), int(data["dim"])
        controls = ControlSet(tuple(data["controls"]["theta"]), tuple(data["controls"]["zeta"]))
        slots: dict[tuple[int, int, int], CoefficientSet] = {}
        for entry in data["coefficients"]:
            i = int(entry["component"])
            key = (i, controls.theta_index(str(entry["theta"])), controls.zeta_index(str(entry["zeta"])))
            if key in slots:
                raise ScenarioError(f"duplicate coefficient entry {key}")
            kappa = entry.get("kappa")
            slots[key] = CoefficientSet(
                sigma=tuple(tuple(CoefficientField.from_dict(f) for f in row) for row in entry["sigma"]),
                drift=tuple(CoefficientField.from_dict(f) for f in entry["drift"]),
                cost=CoefficientField.from_dict(entry["cost"]),
                coupling=tuple(CoefficientField.from_dict(f) for f in entry["coupling"]),
                kappa=None if kappa is None else CoefficientField.from_dict(kappa),
            )
        nth, nze = len(controls.theta), len(controls.zeta)
        missing = [k for k in itertools.product(range(m), range(nth), range(nze)) if k not in slots]
        if missing:
            raise ScenarioError(f"coefficient table incomplete, missing {missing}")
        table = tuple(
            tuple(tuple(slots[(i, a, b)] for b in range(nze)) for a in range(nth)) for i in range(m)
        )
        consts = data.get("constants", {})
        spec = SystemSpec(
            name=str(data["name"]),
            m=m,
            dim=dim,
            controls=controls,
            table=table,
            u0=tuple(CoefficientField.from_dict(f) for f in data["u0"]),
            gamma=float(data.get("gamma", 0.0)),
            holder_mu=float(data.get("mu", 1.0)),
            constants=StructuralConstants(
                C_a=float(consts.get("C_a", 0.0)),
                C_f=float(consts.get("C_f", 0.0)),
                C_sup=float(consts.get("C_sup", 0.0)),
                nu=float(consts.get("nu", 0.0)),
            ),
            description=str(data.get("description", "")),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario file missing key {exc}") from None
    declared = data.get("form")
    if declared is not None and declared != spec.form:
        raise ScenarioError(f"declared form {declared!r} does not match coefficients ({spec.form})")
    return spec


def load_scenario(path: str | Path) -> SystemSpec:
    with open(path) as fh:
        return spec_from_dict(yaml.safe_load(fh))


def save_scenario(spec: SystemSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(spec_to_dict(spec), fh, sort_keys=False)
