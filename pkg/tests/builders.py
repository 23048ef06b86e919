"""Small hand-built systems used as oracles across the test modules."""

from qmsys.scenario import (
    CoefficientField,
    CoefficientSet,
    ControlSet,
    StructuralConstants,
    SystemSpec,
    const,
)

ONE = ControlSet(("0",), ("0",))


def as_field(v):
    return v if isinstance(v, CoefficientField) else const(v)


def linear_1d(m=1, sigma=0.0, drift=0.0, cost=0.0, coupling=None, u0=None, nu=0.0, name="custom", **kw):
    """Single-control 1D system; ``cost``, ``sigma``, ``drift`` may be per component lists."""

    def per(v):
        return list(v) if isinstance(v, (list, tuple)) else [v] * m

    coupling = coupling if coupling is not None else [[0.0] * m for _ in range(m)]
    u0 = u0 if u0 is not None else [0.0] * m
    sets = []
    for i in range(m):
        cs = CoefficientSet(
            sigma=((as_field(per(sigma)[i]),),),
            drift=(as_field(per(drift)[i]),),
            cost=as_field(per(cost)[i]),
            coupling=tuple(as_field(c) for c in coupling[i]),
        )
        sets.append(((cs,),))
    return SystemSpec(
        name=name,
        m=m,
        dim=1,
        controls=ONE,
        table=tuple(sets),
        u0=tuple(as_field(v) for v in u0),
        constants=StructuralConstants(nu=nu, **kw),
    )


def table_1d(values, thetas, zetas, name="table"):
    """Scalar system with constant costs ``values[theta][zeta]`` and no diffusion."""
    table = (
        tuple(
            tuple(CoefficientSet(((const(0.0),),), (const(0.0),), const(v), (const(0.0),)) for v in row)
            for row in values
        ),
    )
    return SystemSpec(name, 1, 1, ControlSet(thetas, zetas), table, (const(0.0),))
