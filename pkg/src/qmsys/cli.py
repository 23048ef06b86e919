"""Command-line entry point: ``qmsys <command> [options]``.

Exit status: 0 on success, 1 when a check or study fails, 2 on usage errors.
Outputs go to ``--out``, else ``$QMSYS_OUTPUT_DIR``, else ``./qmsys_out``.
Wall-clock timings are written to ``timing.json`` only, so every other
output file is byte-identical across identical invocations.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from .catalog import build_catalog_scenario, catalog_names
from .cell import (
    DEFAULT_LAMBDAS,
    CellError,
    CellProblemInstance,
    check_effective_properties,
    effective_hamiltonian,
    effective_linear_coeffs,
    invariant_measure,
)
from .estimates import linfty_bound
from .experiments import (
    PERTURBATION_KINDS,
    continuous_dependence_sweep,
    homogenization_study,
    parse_fraction,
    vanishing_viscosity_study,
)
from .grid import SpaceGrid, fmt_float, sample_fields, write_csv
from .hamiltonian import DiscreteOperatorConfig
from .scenario import (
    ScenarioError,
    load_scenario,
    verify_constants,
    verify_ellipticity,
    verify_quasi_monotonicity,
)
from .solver import SolverError, check_barrier, check_comparison, solve_parabolic

log = logging.getLogger("qmsys")

OUTPUT_ENV = "QMSYS_OUTPUT_DIR"
DEFAULT_OUTPUT = "qmsys_out"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _fraction(text: str) -> Fraction:
    try:
        return parse_fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _fraction_list(text: str) -> list[Fraction]:
    return [_fraction(part) for part in text.split(",") if part.strip()]


def _float_list(text: str) -> list[float]:
    return [float(_fraction(part)) for part in text.split(",") if part.strip()]


def _load_spec(args):
    if getattr(args, "config", None):
        return load_scenario(args.config)
    if not getattr(args, "scenario", None):
        raise UsageError("give --scenario or --config")
    return build_catalog_scenario(args.scenario)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


def _write_timing(out: Path, command: str, seconds: float) -> None:
    _write_json(out / "timing.json", {"command": command, "wall_time": seconds})


def _write_table(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _grid(spec, n: int) -> SpaceGrid:
    return SpaceGrid(n, spec.dim)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_list(args) -> int:
    for name in catalog_names():
        spec = build_catalog_scenario(name)
        print(f"{name:22s} m={spec.m} dim={spec.dim}  {spec.description}")
    return 0


def cmd_solve(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(args)
    grid = _grid(spec, args.nx)
    config = DiscreteOperatorConfig(float(args.eps_visc))
    traj = solve_parabolic(spec, grid, args.t_final, config, fast_epsilon=args.eps_fast, n_snapshots=args.snapshots)
    for k, snap in enumerate(traj.snapshots):
        write_csv(snap, out / f"{spec.name}_snap{k:04d}.csv")
    manifest = {key: val for key, val in traj.manifest.items() if key != "wall_time"}
    manifest["snapshots"] = [f"{spec.name}_snap{k:04d}.csv" for k in range(len(traj.snapshots))]
    manifest["times"] = traj.times
    _write_json(out / f"{spec.name}_manifest.json", manifest)
    _write_timing(out, "solve", traj.manifest["wall_time"])
    print(f"{spec.name}: {traj.steps} steps of {traj.dt:.3e}, {len(traj.snapshots)} snapshots in {out}")
    return 0


def _finish_report(report, out: Path, stem: str, command: str) -> int:
    report.write(out / f"{stem}.csv", include_timing=False)
    _write_timing(out, command, report.manifest.get("wall_time", 0.0))
    for row in report.csv_rows():
        print(",".join(str(row[k]) for k in ("param", "error")))
    if report.fit is not None:
        print(f"fitted exponent {report.fit.exponent:.4f} (residual {report.fit.residual:.2e})")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_vanish(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(args)
    rep = vanishing_viscosity_study(spec, args.eps, _grid(spec, args.nx), args.t_final, threads=args.threads)
    return _finish_report(rep, out, f"vanish_{spec.name}", "vanish")


def cmd_cde(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(args)
    rep = continuous_dependence_sweep(
        spec, args.kind, args.delta, _grid(spec, args.nx), args.t_final, threads=args.threads, fast_epsilon=args.eps_fast
    )
    return _finish_report(rep, out, f"cde_{args.kind}_{spec.name}", "cde")


def cmd_homogenize(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(args)
    rep = homogenization_study(
        spec, args.eps, _grid(spec, args.nx), args.t_final, path=args.path, cell=args.n_cell, threads=args.threads
    )
    return _finish_report(rep, out, f"homogenize_{spec.name}", "homogenize")


def _vector(values, n: int, name: str) -> list[float]:
    vals = list(values) if values is not None else [0.0] * n
    if len(vals) == 1 and n > 1:
        vals = vals * n
    if len(vals) != n:
        raise UsageError(f"--{name} needs {n} entries")
    return vals


def cmd_cell(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(args)
    n, m = spec.dim, spec.m
    X = np.array(_vector(args.X, n * n, "X")).reshape(n, n)
    inst = CellProblemInstance(args.component, _vector(args.x, n, "x"), _vector(args.r, m, "r"), _vector(args.p, n, "p"), X)
    sol = effective_hamiltonian(spec, inst, args.lambdas, args.n_cell)
    stem = f"cell_{spec.name}_{args.component}"
    write_csv(sol.corrector, out / f"{stem}_corrector.csv")
    rows = [[lam, avg, spr, res] for lam, avg, spr, res in zip(sol.lambdas, sol.averages, sol.spreads, sol.residuals)]
    _write_table(out / f"{stem}.csv", ["lambda", "minus_lambda_v_mean", "spread", "residual"], rows)
    _write_json(out / f"{stem}_summary.json", {"scenario": spec.name, "H_bar": sol.H_bar, "instance": inst.__dict__})
    print(f"H_bar = {sol.H_bar!r}")
    return 0


def cmd_measure(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(args)
    x0 = _vector(args.x, spec.dim, "x")
    meas = invariant_measure(spec, args.component, x0, args.n_cell)
    stem = f"measure_{spec.name}_{args.component}"
    write_csv(meas.density, out / f"{stem}_density.csv")
    slow = SpaceGrid(args.nx, spec.dim) if args.nx >= 4 else None
    nodes = [np.array(x0)] if slow is None else list(np.stack([c.ravel() for c in slow.coords()], axis=1))
    header = [f"x{k + 1}" for k in range(spec.dim)] + ["i"]
    header += [f"a_bar_{k + 1}{k + 1}" for k in range(spec.dim)] + ["F_bar_0"]
    rows = []
    for x in nodes:
        coeffs = effective_linear_coeffs(spec, x, args.n_cell)
        F = coeffs.F_bar(np.zeros(spec.m), np.zeros(spec.dim))
        for i in range(spec.m):
            rows.append([float(c) for c in x] + [i] + [float(coeffs.a_bar[i, k, k]) for k in range(spec.dim)] + [float(F[i])])
    _write_table(out / f"{stem}_coefficients.csv", header, rows)
    print(f"a_bar(x0) = {[float(v) for v in np.diag(effective_linear_coeffs(spec, x0, args.n_cell).a_bar[args.component])]}")
    return 0


CHECK_SUITES = ("structure", "comparison", "bounds", "effective", "invariants")


def _check_rows(suite: str, names: list[str], seed: int, budget: int) -> list[list]:
    rows = []
    run = {suite} if suite != "invariants" else set(CHECK_SUITES) - {"invariants"}
    for name in names:
        spec = build_catalog_scenario(name)
        eps = Fraction(1, 4) if spec.has_fast else None
        grid = SpaceGrid(64 if spec.dim == 1 else 16, spec.dim)
        if "structure" in run:
            qm = verify_quasi_monotonicity(spec, seed=seed)
            rows.append(["structure", name, "quasi_monotone", qm.gamma_estimate, int(qm.passed)])
            el = verify_ellipticity(spec, seed=seed)
            rows.append(["structure", name, "ellipticity", el.nu_estimate, int(el.passed)])
            co = verify_constants(spec, seed=seed)
            rows.append(["structure", name, "constants", co.C_f, int(co.passed)])
        if "comparison" in run:
            rng = np.random.default_rng(seed)
            u0 = sample_fields(spec.u0, grid)
            bump = rng.uniform(0.0, 0.5, u0.values.shape)
            rep = check_comparison(spec, u0, u0.with_values(u0.values + bump), 0.05, fast_epsilon=eps)
            rows.append(["comparison", name, "ordered_data", rep.max_violation, int(rep.passed)])
            bar = check_barrier(spec, grid, 0.05, fast_epsilon=eps)
            rows.append(["comparison", name, "barrier", bar.max_excess, int(bar.passed)])
        if "bounds" in run:
            traj = solve_parabolic(spec, grid, 0.1, fast_epsilon=eps, n_snapshots=4)
            lb = linfty_bound(traj, spec, 0.1)
            rows.append(["bounds", name, "linfty", lb.observed - lb.rhs, int(lb.passed)])
        if "effective" in run and spec.has_fast and spec.constants.nu > 0:
            cell = 32 if spec.dim == 1 else 16
            ep = check_effective_properties(spec, budget=budget, seed=seed, cell=cell)
            rows.append(["effective", name, "lipschitz", ep.lipschitz_C1, int(ep.lipschitz_violations == 0)])
            rows.append(["effective", name, "ellipticity", ep.nu_bar, int(ep.ellipticity_violations == 0)])
            rows.append(["effective", name, "quasi_monotone", float(ep.quasi_monotone_violations), int(ep.quasi_monotone_violations == 0)])
            if ep.convexity_violations is not None:
                rows.append(["effective", name, "convexity", float(ep.convexity_violations), int(ep.convexity_violations == 0)])
    return rows


def cmd_check(args) -> int:
    out = _out_dir(args)
    names = [args.scenario] if args.scenario else catalog_names()
    start = time.perf_counter()
    rows = _check_rows(args.suite, names, args.seed, args.budget)
    _write_table(out / f"check_{args.suite}.csv", ["suite", "scenario", "check", "value", "pass"], rows)
    _write_timing(out, "check", time.perf_counter() - start)
    failed = [r for r in rows if not r[-1]]
    for r in failed:
        print(f"FAIL {r[0]} {r[1]} {r[2]} value={r[3]!r}")
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    common.add_argument("--seed", type=int, default=0, help="seed for every sampled check (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent solves")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", choices=catalog_names(), help="catalog scenario")
    scen.add_argument("--config", help="scenario YAML file instead of a catalog name")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--nx", type=int, default=128, help="nodes per axis")
    run.add_argument("--t-final", type=lambda s: float(_fraction(s)), default=0.1)

    p = argparse.ArgumentParser(prog="qmsys", description="Numerical lab for weakly coupled min-max parabolic systems.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("list", parents=[common], help="list catalog scenarios")

    s = sub.add_parser("solve", parents=[common, scen, run], help="march one scenario and export snapshots")
    s.add_argument("--eps-visc", type=_fraction, default=Fraction(0))
    s.add_argument("--eps-fast", type=_fraction, default=None, help="fast scale, e.g. 1/8")
    s.add_argument("--snapshots", type=int, default=8)

    s = sub.add_parser("vanish", parents=[common, scen, run], help="vanishing viscosity study")
    s.add_argument("--eps", type=_fraction_list, default=_fraction_list("1/10,1/20,1/40,1/80"))

    s = sub.add_parser("cde", parents=[common, scen, run], help="continuous dependence sweep")
    s.add_argument("--kind", choices=PERTURBATION_KINDS, default="l")
    s.add_argument("--delta", type=_fraction_list, default=_fraction_list("1/10,1/20,1/40"))
    s.add_argument("--eps-fast", type=_fraction, default=None)

    s = sub.add_parser("homogenize", parents=[common, scen, run], help="homogenization study")
    s.add_argument("--eps", type=_fraction_list, default=_fraction_list("1/4,1/8,1/16,1/32"))
    s.add_argument("--path", choices=("auto", "measure", "lambda", "general"), default="auto")
    s.add_argument("--n-cell", type=int, default=None)

    for name, helptext in (("cell", "ergodic constant of one cell problem"), ("measure", "invariant measure and averaged coefficients")):
        s = sub.add_parser(name, parents=[common, scen], help=helptext)
        s.add_argument("--component", type=int, default=0)
        s.add_argument("--x", type=_float_list, default=None)
        s.add_argument("--n-cell", type=int, default=None)
        if name == "cell":
            s.add_argument("--r", type=_float_list, default=None)
            s.add_argument("--p", type=_float_list, default=None)
            s.add_argument("--X", type=_float_list, default=None, help="row-major n*n entries")
            s.add_argument("--lambdas", type=_float_list, default=list(DEFAULT_LAMBDAS))
        else:
            s.add_argument("--nx", type=int, default=8, help="slow nodes per axis for the coefficient table")

    s = sub.add_parser("check", parents=[common], help="property suites over the catalog")
    s.add_argument("--suite", choices=CHECK_SUITES, default="invariants")
    s.add_argument("--scenario", choices=catalog_names(), default=None)
    s.add_argument("--budget", type=int, default=1000, help="samples for effective-operator checks")
    return p


COMMANDS = {
    "list": cmd_list,
    "solve": cmd_solve,
    "vanish": cmd_vanish,
    "cde": cmd_cde,
    "homogenize": cmd_homogenize,
    "cell": cmd_cell,
    "measure": cmd_measure,
    "check": cmd_check,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("qmsys: error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ScenarioError, ValueError) as exc:
        print(f"qmsys: error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, CellError) as exc:
        print(f"qmsys: failed: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
