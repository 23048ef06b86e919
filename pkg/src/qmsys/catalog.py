"""Named scenarios.

Each builder returns a fully specified :class:`SystemSpec`; the same systems
ship as YAML files under ``catalog/`` for use with ``--scenario-file``.
Declared constants are analytic bounds of the moduli (Lipschitz constants of
``sin(2 pi k s)`` are ``2 pi |k|`` times the amplitude, and ``sqrt(c + a g)``
has Lipschitz constant at most ``|a| Lip(g) / (2 sqrt(c - |a|))``).
"""

from __future__ import annotations

import math
from importlib import resources

from .scenario import (
    ZERO,
    CoefficientSet,
    ControlSet,
    ScenarioError,
    StructuralConstants,
    SystemSpec,
    const,
    cos_mode,
    load_scenario,
    sin_mode,
    trig,
    validate_spec,
)

PI = math.pi


def _set1d(sigma, drift=ZERO, cost=ZERO, coupling=(ZERO,)):
    return CoefficientSet(sigma=((sigma,),), drift=(drift,), cost=cost, coupling=tuple(coupling))


def _single(sets_by_component):
    """Table for a single (theta, zeta) pair."""
    return tuple(((cs,),) for cs in sets_by_component)


def _generator_row(i: int, m: int, rate):
    row = [ZERO] * m
    j = 1 - i
    row[i] = rate
    row[j] = rate.scaled(-1.0)
    return tuple(row)


SIN_X = trig(0.0, sin_mode(1.0, kx=(1,)))
COS_X = trig(0.0, cos_mode(1.0, kx=(1,)))
ONE_CONTROL = ControlSet(("0",), ("0",))


def heat_1d() -> SystemSpec:
    return SystemSpec(
        name="heat_1d",
        m=1,
        dim=1,
        controls=ONE_CONTROL,
        table=_single([_set1d(const(1.0))]),
        u0=(SIN_X,),
        constants=StructuralConstants(C_a=0.0, C_f=0.0, C_sup=0.0, nu=1.0),
        description="u_t = u_xx on the unit torus",
    )


def coupled_switch_2sys() -> SystemSpec:
    rate = const(1.0)
    l1 = trig(0.5, cos_mode(0.5, kx=(1,)))
    l2 = trig(0.0, sin_mode(-0.5, kx=(1,)))
    sets = [
        _set1d(const(0.5), cost=l1, coupling=_generator_row(0, 2, rate)),
        _set1d(const(0.5), cost=l2, coupling=_generator_row(1, 2, rate)),
    ]
    return SystemSpec(
        name="coupled_switch_2sys",
        m=2,
        dim=1,
        controls=ONE_CONTROL,
        table=_single(sets),
        u0=(SIN_X, COS_X),
        constants=StructuralConstants(C_a=0.0, C_f=PI, C_sup=1.0, nu=0.25),
        description="two linear heat equations switched by a rate-one generator",
    )


def isaacs_1d() -> SystemSpec:
    speed = trig(0.5, cos_mode(0.25, kx=(1,)))
    calm_cost = trig(0.0, sin_mode(0.3, kx=(1,)))
    noisy_cost = trig(0.0, sin_mode(0.3, kx=(1,)), cos_mode(0.1, kt=1.0))
    table = ((
        (_set1d(const(0.15), speed.scaled(-1.0), calm_cost), _set1d(const(0.3), speed.scaled(-1.0), noisy_cost)),
        (_set1d(const(0.15), speed, calm_cost), _set1d(const(0.3), speed, noisy_cost)),
    ),)
    return SystemSpec(
        name="isaacs_1d",
        m=1,
        dim=1,
        controls=ControlSet(("left", "right"), ("calm", "noisy")),
        table=table,
        u0=(trig(0.0, cos_mode(0.5, kx=(1,))),),
        constants=StructuralConstants(C_a=0.0, C_f=0.6 * PI, C_sup=0.4, nu=0.0225),
        description="scalar Isaacs equation: drift direction maximized, noise level minimized",
    )


def firstorder_2sys() -> SystemSpec:
    speed = trig(0.5, sin_mode(0.25, kx=(1,)))
    rate = const(1.0)
    costs = [trig(0.0, cos_mode(0.2, kx=(1,))), trig(0.1, sin_mode(0.2, kx=(1,)))]
    table = tuple(
        tuple(
            (_set1d(ZERO, speed.scaled(sign), costs[i], _generator_row(i, 2, rate)),)
            for sign in (-1.0, 1.0)
        )
        for i in range(2)
    )
    return SystemSpec(
        name="firstorder_2sys",
        m=2,
        dim=1,
        controls=ControlSet(("minus", "plus"), ("0",)),
        table=table,
        u0=(SIN_X, trig(0.0, cos_mode(0.5, kx=(1,)))),
        constants=StructuralConstants(C_a=0.0, C_f=0.5 * PI, C_sup=0.3, nu=0.0),
        description="degenerate first-order pair of eikonal-type equations with switching",
    )


def hom_linear_1d() -> SystemSpec:
    sigma = trig(2.0, sin_mode(1.0, ky=(1,)), root=True)
    return SystemSpec(
        name="hom_linear_1d",
        m=1,
        dim=1,
        controls=ONE_CONTROL,
        table=_single([_set1d(sigma)]),
        u0=(SIN_X,),
        constants=StructuralConstants(C_a=PI, C_f=0.0, C_sup=0.0, nu=1.0),
        description="oscillating diffusion 2 + sin(2 pi x/eps); effective coefficient sqrt(3)",
    )


def hom_linear_2d() -> SystemSpec:
    s11 = trig(2.0, sin_mode(1.0, ky=(1, 0)), root=True)
    s22 = trig(1.5, cos_mode(0.5, ky=(0, 1)), root=True)
    cs = CoefficientSet(
        sigma=((s11, ZERO), (ZERO, s22)),
        drift=(ZERO, ZERO),
        cost=ZERO,
        coupling=(ZERO,),
    )
    u0 = trig(0.0, cos_mode(0.5, kx=(1, -1)), cos_mode(-0.5, kx=(1, 1)))
    return SystemSpec(
        name="hom_linear_2d",
        m=1,
        dim=2,
        controls=ONE_CONTROL,
        table=_single([cs]),
        u0=(u0,),
        constants=StructuralConstants(C_a=PI, C_f=0.0, C_sup=0.0, nu=1.0),
        description="separable oscillating diffusion; effective matrix diag(sqrt 3, sqrt 2)",
    )


def hom_coupled_1d() -> SystemSpec:
    sig = [trig(2.0, sin_mode(1.0, ky=(1,)), root=True), trig(1.5, cos_mode(0.5, ky=(1,)), root=True)]
    drift = [trig(0.5, cos_mode(0.25, ky=(1,))), const(-0.25)]
    cost = [
        trig(0.0, sin_mode(0.2, kx=(1,)), cos_mode(0.3, ky=(1,))),
        trig(0.1, sin_mode(0.2, ky=(1,))),
    ]
    rates = [trig(1.0, sin_mode(0.5, ky=(1,))), trig(1.0, cos_mode(0.5, ky=(1,)))]
    sets = [_set1d(sig[i], drift[i], cost[i], _generator_row(i, 2, rates[i])) for i in range(2)]
    # C_f: Lip(l_1) + 2 R Lip(rate) with R = |u0| + C_sup = 1.5
    c_f = math.hypot(0.4 * PI, 0.6 * PI) + 3.0 * PI
    return SystemSpec(
        name="hom_coupled_1d",
        m=2,
        dim=1,
        controls=ONE_CONTROL,
        table=_single(sets),
        u0=(SIN_X, COS_X),
        constants=StructuralConstants(C_a=PI, C_f=c_f, C_sup=0.5, nu=1.0),
        description="linear pair with oscillating diffusion, drift, cost and switching rates",
    )


def hom_hjb_1d() -> SystemSpec:
    sigma = trig(1.5, sin_mode(0.5, ky=(1,)), root=True)
    speed = trig(0.5, cos_mode(0.25, ky=(1,)))
    cost = trig(0.0, sin_mode(0.1, kx=(1,)), sin_mode(0.2, ky=(1,)))
    table = (((_set1d(sigma, speed.scaled(-1.0), cost),), (_set1d(sigma, speed, cost),)),)
    return SystemSpec(
        name="hom_hjb_1d",
        m=1,
        dim=1,
        controls=ControlSet(("minus", "plus"), ("0",)),
        table=table,
        u0=(SIN_X,),
        constants=StructuralConstants(C_a=0.5 * PI, C_f=0.5 * PI, C_sup=0.3, nu=1.0),
        description="convex Bellman equation with oscillating speed and diffusion",
    )


def hom_isaacs_1d() -> SystemSpec:
    speed = trig(0.5, cos_mode(0.25, ky=(1,)))
    calm = (trig(1.0, sin_mode(0.5, ky=(1,)), root=True), trig(0.0, sin_mode(0.1, kx=(1,)), cos_mode(0.2, ky=(1,))))
    noisy = (trig(2.0, sin_mode(1.0, ky=(1,)), root=True), const(0.1))
    table = (tuple(
        tuple(_set1d(s, speed.scaled(sign), c) for s, c in (calm, noisy))
        for sign in (-1.0, 1.0)
    ),)
    return SystemSpec(
        name="hom_isaacs_1d",
        m=1,
        dim=1,
        controls=ControlSet(("minus", "plus"), ("calm", "noisy")),
        table=table,
        u0=(SIN_X,),
        constants=StructuralConstants(C_a=PI, C_f=0.5 * PI, C_sup=0.3, nu=0.5),
        description="Isaacs equation with control-dependent oscillating diffusion",
    )


BUILDERS = {
    "heat_1d": heat_1d,
    "coupled_switch_2sys": coupled_switch_2sys,
    "isaacs_1d": isaacs_1d,
    "firstorder_2sys": firstorder_2sys,
    "hom_linear_1d": hom_linear_1d,
    "hom_linear_2d": hom_linear_2d,
    "hom_coupled_1d": hom_coupled_1d,
    "hom_hjb_1d": hom_hjb_1d,
    "hom_isaacs_1d": hom_isaacs_1d,
}


def catalog_names() -> list[str]:
    return list(BUILDERS)


_cache: dict[str, SystemSpec] = {}


def build_catalog_scenario(name: str) -> SystemSpec:
    if name not in BUILDERS:
        raise ScenarioError(f"no such scenario: {name!r}")
    if name not in _cache:
        spec = BUILDERS[name]()
        validate_spec(spec)
        _cache[name] = spec
    return _cache[name]


def catalog_file(name: str):
    if name not in BUILDERS:
        raise ScenarioError(f"no such scenario: {name!r}")
    return resources.files("qmsys") / "catalog" / f"{name}.yaml"


def load_catalog_file(name: str) -> SystemSpec:
    with resources.as_file(catalog_file(name)) as path:
        return load_scenario(path)
