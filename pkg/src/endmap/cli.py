"""Batch command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure (guard trigger
or non-convergence).  Data goes to --out or stdout; warnings and errors
go to stderr only.  Identical inputs and --seed produce byte-identical
output.  Subcommands whose results are naturally graphical accept --fig
PATH to render a figure next to the delimited output.
"""

from __future__ import annotations

import argparse
import sys as _sys
import warnings
from pathlib import Path

import numpy as np

from . import figures, io
from .dynamics import ControlGrid, ExplosionGuard, cost, endpoint, integrate, variational_jacobian
from .extremal import (
    kalman_regularity,
    lagrange_multipliers,
    normal_flow,
    pontryagin_cone,
    shoot,
)
from .systems import BUILTIN_NAMES, SystemFormatError, builtin, load_system
from .value import level_set_sample, properness_scan, tangency_fit, value_at
from .vfexpr import ParseError


class CliError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _resolve_system(spec: str):
    if not spec:
        raise CliError("--system is required")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if spec.startswith("builtin:"):
            name = spec[len("builtin:") :]
            try:
                system = builtin(name)
            except KeyError:
                raise CliError(
                    f"unknown builtin system {name!r}; known: {', '.join(BUILTIN_NAMES)}"
                ) from None
        else:
            if not Path(spec).is_file():
                raise CliError(f"system file not found: {spec}")
            system = load_system(spec)
    for w in caught:
        print(f"warning: {w.message}", file=_sys.stderr)
    return system


def _resolve_control(system, spec: str) -> ControlGrid:
    if not spec:
        raise CliError("--control is required for this command")
    if spec == "zero":
        return system.zero_control()
    if not Path(spec).is_file():
        raise CliError(f"control file not found: {spec}")
    values, dt = io.read_control_csv(Path(spec).read_text(encoding="utf-8"))
    if values.shape[1] != system.m:
        raise CliError(
            f"control file has {values.shape[1]} channels, system expects {system.m}"
        )
    K = values.shape[0]
    if K > 1 and abs(K * dt - system.T) > 1e-9 * max(1.0, system.T):
        raise CliError("control grid horizon does not match the system horizon")
    return ControlGrid(values, system.T)


def _parse_vector(text: str, n: int, label: str) -> np.ndarray:
    try:
        vals = np.array([float(p) for p in text.split(",")])
    except ValueError:
        raise CliError(f"{label} must be comma-separated numbers") from None
    if vals.shape != (n,):
        raise CliError(f"{label} must have {n} entries")
    return vals


def _emit(args, text: str):
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        _sys.stdout.write(text)


def _emit_result(args, command: str, payload: dict, plain: str):
    if args.json:
        _emit(args, io.json_document(command, payload))
    else:
        _emit(args, plain)


# ---------------------------------------------------------------------------
# subcommands


def cmd_integrate(args):
    system = _resolve_system(args.system)
    u = _resolve_control(system, args.control)
    try:
        traj = integrate(system, u)
    except ExplosionGuard as e:
        print(f"explosion guard: {e}", file=_sys.stderr)
        traj = e.trajectory
        if traj is not None:
            payload = dict(
                converged=False,
                t_star=e.t_star,
                times=traj.times,
                states=traj.states,
            )
            _emit_result(args, "integrate", payload, io.trajectory_csv(traj))
            if args.fig:
                figures.save_trajectory(traj, args.fig)
        raise NumericalFailure from None
    payload = dict(converged=True, times=traj.times, states=traj.states)
    _emit_result(args, "integrate", payload, io.trajectory_csv(traj))
    if args.fig:
        figures.save_trajectory(traj, args.fig)
    return 0


def cmd_endpoint(args):
    system = _resolve_system(args.system)
    u = _resolve_control(system, args.control)
    try:
        x = endpoint(system, u)
    except ExplosionGuard as e:
        print(f"explosion guard: {e}", file=_sys.stderr)
        raise NumericalFailure from None
    _emit_result(
        args, "endpoint", dict(endpoint=x, cost=cost(u)), io.endpoint_csv(x)
    )
    return 0


def cmd_jacobian(args):
    system = _resolve_system(args.system)
    u = _resolve_control(system, args.control)
    try:
        J, _ = variational_jacobian(system, u)
    except ExplosionGuard as e:
        print(f"explosion guard: {e}", file=_sys.stderr)
        raise NumericalFailure from None
    payload = dict(jacobian=J, K=u.K, m=u.m, n=system.n)
    _emit_result(args, "jacobian", payload, io.jacobian_csv(J, u.K, u.m))
    return 0


def cmd_flow(args):
    system = _resolve_system(args.system)
    p0 = _parse_vector(args.p0, system.n, "--p0")
    try:
        arc = normal_flow(system, p0)
    except ExplosionGuard as e:
        print(f"explosion guard: {e}", file=_sys.stderr)
        raise NumericalFailure from None
    payload = dict(
        times=arc.times,
        states=arc.states,
        covectors=arc.covectors,
        controls=arc.controls,
        cost=arc.cost,
    )
    _emit_result(args, "flow", payload, io.arc_csv(arc))
    if args.fig:
        figures.save_arc(arc, args.fig)
    return 0


def cmd_shoot(args):
    system = _resolve_system(args.system)
    target = _parse_vector(args.target, system.n, "--target")
    seeds = None
    if args.p0:
        seeds = [_parse_vector(args.p0, system.n, "--p0")]
    result = shoot(system, target, seeds=seeds, seed=args.seed)
    payload = dict(
        solutions=[
            dict(
                p0=s.p0,
                cost=s.cost,
                defect=s.defect,
                endpoint=s.endpoint,
                pnorm=float(np.linalg.norm(s.p0)),
                p0proj=s.p0proj,
            )
            for s in result.solutions
        ],
        best_defect=result.best_defect,
    )
    _emit_result(args, "shoot", payload, io.shoot_csv(result, system.n))
    if not result.solutions:
        print(
            f"no solutions converged; best defect {io.fmt(result.best_defect)}",
            file=_sys.stderr,
        )
        raise NumericalFailure
    return 0


def cmd_value(args):
    system = _resolve_system(args.system)
    target = _parse_vector(args.target, system.n, "--target")
    res = value_at(system, target, seed=args.seed)
    defect = res.shoot_defect if res.method in ("shooting", "both") else res.direct_defect
    if not res.reachable:
        defect = min(res.shoot_defect, res.direct_defect)
    header = ["S", "method", "shoot_cost", "direct_cost", "defect"]
    row = [
        io.fmt(res.S) if res.S is not None else "unreachable",
        res.method,
        io.fmt(res.shoot_cost) if res.shoot_cost is not None else "",
        io.fmt(res.direct_cost) if res.direct_cost is not None else "",
        io.fmt(defect),
    ]
    plain = io.csv_text(header, [row])
    payload = dict(
        S=res.S,
        reachable=res.reachable,
        method=res.method,
        shoot_cost=res.shoot_cost,
        direct_cost=res.direct_cost,
        defect=defect,
        witness_p0=res.p0,
        witness_control=res.control.values if res.control is not None else None,
    )
    _emit_result(args, "value", payload, plain)
    if not res.reachable:
        print("target unreachable within tolerance", file=_sys.stderr)
        raise NumericalFailure
    return 0


def cmd_sphere(args):
    system = _resolve_system(args.system)
    cloud = level_set_sample(system, args.r, count=args.count, seed=args.seed)
    payload = dict(
        r=cloud.r,
        metadata=cloud.metadata,
        points=[
            dict(
                endpoint=p.endpoint,
                p0=p.p0,
                cost=p.cost,
                pnorm=p.pnorm,
                p0proj=p.p0proj,
                flag=p.flag,
            )
            for p in cloud.all_points
        ],
    )
    _emit_result(args, "sphere", payload, io.cloud_csv(cloud))
    if args.fig:
        figures.save_cloud(cloud, args.fig)
    if not cloud.points:
        print("no level-set points found", file=_sys.stderr)
        raise NumericalFailure
    return 0


def cmd_scan_proper(args):
    system = _resolve_system(args.system)
    A = _parse_vector(args.target, system.n, "--target")
    direction = _parse_vector(args.direction, system.n, "--direction")
    try:
        deltas = [float(p) for p in args.deltas.split(",")]
    except ValueError:
        raise CliError("--deltas must be comma-separated numbers") from None
    scan = properness_scan(system, A, direction, deltas, seed=args.seed)
    payload = dict(
        A=scan.A,
        direction=scan.direction,
        rows=[
            dict(
                delta=row.delta,
                target=row.target,
                pnorm=row.pnorm,
                p0proj=row.p0proj,
                cost=row.cost,
                found=row.found,
            )
            for row in scan.rows
        ],
        metadata=scan.metadata,
    )
    _emit_result(args, "scan-proper", payload, io.scan_csv(scan))
    if args.fig:
        figures.save_scan(scan, args.fig)
    if not all(row.found for row in scan.rows):
        print("some offsets had no converged solutions", file=_sys.stderr)
        raise NumericalFailure
    return 0


def cmd_tangency(args):
    system = _resolve_system(args.system)
    A = _parse_vector(args.target, system.n, "--target")
    H = _parse_vector(args.normal, system.n, "--normal")
    cloud = level_set_sample(system, args.r, count=args.count, seed=args.seed)
    report = tangency_fit(cloud, A, H)
    payload = dict(
        A=report.A,
        normal=report.normal,
        windows=[
            dict(window=w.window, count=w.count, max_angle=w.max_angle)
            for w in report.windows
        ],
        slope=report.slope,
        intercept=report.intercept,
        slope_points=report.slope_points,
        cloud_metadata=cloud.metadata,
    )
    if args.json:
        _emit(args, io.json_document("tangency", payload))
    else:
        _emit(args, io.to_json(payload))
    if args.fig:
        figures.save_tangency(report, cloud, args.fig)
    if not cloud.points:
        print("no level-set points found", file=_sys.stderr)
        raise NumericalFailure
    return 0


def cmd_classify(args):
    system = _resolve_system(args.system)
    u = _resolve_control(system, args.control)
    try:
        sols = lagrange_multipliers(system, u)
    except ExplosionGuard as e:
        print(f"explosion guard: {e}", file=_sys.stderr)
        raise NumericalFailure from None
    payload = dict(
        corank=sols[0].corank if sols else 0,
        multipliers=[
            dict(
                pT=s.pT,
                lam0=s.lam0,
                residual=s.residual,
                classification=s.classification,
                corank=s.corank,
            )
            for s in sols
        ],
    )
    if args.json:
        _emit(args, io.json_document("classify", payload))
    else:
        _emit(args, io.to_json(payload))
    return 0


def cmd_kalman(args):
    system = _resolve_system(args.system)
    verdict = kalman_regularity(system)
    _emit_result(args, "kalman", dict(verdict=verdict), verdict + "\n")
    return 0


def cmd_cone(args):
    system = _resolve_system(args.system)
    report = pontryagin_cone(system, args.tsample, args.kmax)
    payload = dict(
        t=report.t,
        x=report.x,
        span_dim=report.span_dim,
        H1=report.H1,
        H2=report.H2,
        H3=report.H3,
        brackets=[np.asarray(b) for b in report.brackets],
    )
    if args.json:
        _emit(args, io.json_document("cone", payload))
    else:
        _emit(args, io.to_json(payload))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, fig=False):
    p.add_argument("--system", required=True, help="system file or builtin:NAME")
    p.add_argument("--out", default=None, help="write output to this path (default stdout)")
    p.add_argument("--json", action="store_true", help="emit a JSON document")
    p.add_argument("--seed", type=int, default=0, help="seed shift for deterministic sweeps")
    if fig:
        p.add_argument("--fig", default=None, help="render a figure to this path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="endmap",
        description="End-point maps, extremal shooting, and value-function "
        "level sets for affine control systems with quadratic cost.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="integrate a control and emit the trajectory")
    _add_common(p, fig=True)
    p.add_argument("--control", required=True, help="control CSV path or 'zero'")
    p.set_defaults(fn=cmd_integrate)

    p = sub.add_parser("endpoint", help="terminal state of a control")
    _add_common(p)
    p.add_argument("--control", required=True)
    p.set_defaults(fn=cmd_endpoint)

    p = sub.add_parser("jacobian", help="derivative of the end-point map at a control")
    _add_common(p)
    p.add_argument("--control", required=True)
    p.set_defaults(fn=cmd_jacobian)

    p = sub.add_parser("flow", help="flow a normal extremal from an initial covector")
    _add_common(p, fig=True)
    p.add_argument("--p0", required=True, help="initial covector, comma separated")
    p.set_defaults(fn=cmd_flow)

    p = sub.add_parser("shoot", help="solve for covectors reaching a target")
    _add_common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--p0", default=None, help="extra seed covector")
    p.set_defaults(fn=cmd_shoot)

    p = sub.add_parser("value", help="value of the cost at a target point")
    _add_common(p)
    p.add_argument("--target", required=True)
    p.set_defaults(fn=cmd_value)

    p = sub.add_parser("sphere", help="sample a level set of the value function")
    _add_common(p, fig=True)
    p.add_argument("--r", type=float, required=True, help="level of the value function")
    p.add_argument("--count", type=int, default=256, help="number of covector directions")
    p.set_defaults(fn=cmd_sphere)

    p = sub.add_parser("scan-proper", help="covector norms along targets approaching a point")
    _add_common(p, fig=True)
    p.add_argument("--target", required=True, help="the limit point A")
    p.add_argument("--direction", required=True, help="approach direction")
    p.add_argument("--deltas", required=True, help="comma-separated offsets")
    p.set_defaults(fn=cmd_scan_proper)

    p = sub.add_parser("tangency", help="tangency of a level set to a hyperplane")
    _add_common(p, fig=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--count", type=int, default=256)
    p.add_argument("--target", required=True, help="the tangency point A")
    p.add_argument("--normal", required=True, help="hyperplane normal")
    p.set_defaults(fn=cmd_tangency)

    p = sub.add_parser("classify", help="Lagrange multipliers and corank at a control")
    _add_common(p)
    p.add_argument("--control", required=True)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("kalman", help="linear-test regularity at the base point")
    _add_common(p)
    p.set_defaults(fn=cmd_kalman)

    p = sub.add_parser("cone", help="iterated-bracket span test along the first channel")
    _add_common(p)
    p.add_argument("--tsample", type=float, required=True)
    p.add_argument("--kmax", type=int, default=2)
    p.set_defaults(fn=cmd_cone)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except NumericalFailure:
        return 3
    except ExplosionGuard as e:
        print(f"explosion guard: {e}", file=_sys.stderr)
        return 3
    except CliError as e:
        print(f"error: {e}", file=_sys.stderr)
        return 2
    except (SystemFormatError, ParseError) as e:
        print(f"error: {e}", file=_sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=_sys.stderr)
        return 2


def entry():
    _sys.exit(main())
