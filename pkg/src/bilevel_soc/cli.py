"""Command-line front end: ``bilevel-soc <command> [options]``.

Every command prints (or writes with ``--out``) a JSON report
``{command, inputs, results, warnings, config}``; ``--format table`` prints a
short human-readable summary instead.  The exit code is 0 unless an error
occurred; warnings never change it.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import calmness, lower, reform, soc, stationarity
from .config import DEFAULT_TOL, DEFAULTS, Tolerances
from .problem import BilevelProblem, bundled_problem, load_problem

SCHEMA_PATH = Path(__file__).with_name("data") / "report.schema.json"

# closed-form value functions of the bundled examples, used by ``example``
CLOSED_FORM_V = {
    "3.1": lambda x: -0.25 * x[0] ** 2 if x[0] > 0 else 0.0,
    "4.6": lambda x: -0.25 * (x[0] + x[1]) ** 2 if x[0] + x[1] > 0 else 0.0,
    "4.8": lambda x: -0.5 * x[0] ** 2 if x[0] > 0 else 0.0,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if hasattr(obj, "value") and not isinstance(obj, (int, str)):
        return obj.value
    return obj


def _vec(text: str | None, name: str, size: int | None = None):
    if text is None:
        return None
    try:
        v = np.array([float(t) for t in text.replace(";", ",").split(",") if t.strip()], float)
    except ValueError:
        raise ValueError(f"--{name} expects comma-separated numbers, got {text!r}")
    if size is not None and v.size != size:
        raise ValueError(f"--{name} needs {size} entries, got {v.size}")
    return v


def _problem(args) -> BilevelProblem:
    src = args.problem
    try:
        return bundled_problem(src) if src in ("3.1", "4.6", "4.8") else load_problem(src)
    except FileNotFoundError:
        raise ValueError(f"problem file {src!r} not found")


def _tolerances(args) -> Tolerances:
    over = {k[4:]: v for k, v in vars(args).items() if k.startswith("tol_") and v is not None}
    return DEFAULT_TOL.updated(**over)


def _grid(prob: BilevelProblem, spec: str | None, default_n: int):
    """Grid spec ``lo:hi:n`` per x-dimension separated by ``x``; default spans x_box."""
    if spec:
        parts = spec.split("x") if "x" in spec and prob.n > 1 else [spec] * prob.n
        if len(parts) != prob.n:
            raise ValueError(f"grid spec needs {prob.n} parts separated by 'x'")
        axes = []
        for part in parts:
            lo, hi, n = part.split(":")
            axes.append(np.linspace(float(lo), float(hi), int(n)))
    else:
        axes = [np.linspace(lo, hi, default_n) for lo, hi in prob.x_box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return [np.array(p) for p in np.stack([m.ravel() for m in mesh], axis=1)]


def _point(gcp, args):
    if args.blocks:
        return reform.point_from_blocks(gcp, json.loads(args.blocks))
    if args.point:
        return _vec(args.point, "point", gcp.dim)
    return reform.default_candidate(gcp)


# commands ---------------------------------------------------------------------------

def cmd_lower_solve(args, prob, tol, warnings):
    x = _vec(args.x, "x", prob.n)
    sol = lower.solve_lower(prob, x, grid_per_dim=args.grid_per_dim, tol=tol)
    warnings += sol.warnings
    out = sol.to_dict()
    out["multiplier_sets"] = [lower.multiplier_set(prob, x, y, tol).to_dict() for y in sol.minimizers]
    return out


def cmd_value_fn(args, prob, tol, warnings):
    oracle = lower.get_oracle(prob)
    rows = []
    for x in _grid(prob, args.grid, args.n):
        sol = oracle.solution(x)
        warnings += [f"x={x.tolist()}: {w}" for w in sol.warnings]
        rows.append({"x": x, "V": sol.value, "minimizers": sol.minimizers})
    return {"points": rows}


def cmd_sigma(args, prob, tol, warnings):
    kinds = [k.strip().upper() for k in args.kinds.split(",")]
    bad = [k for k in kinds if k not in reform.SIGMA_KINDS]
    if bad:
        raise ValueError(f"unknown Sigma kind(s) {bad}; choose from {list(reform.SIGMA_KINDS)}")
    records = reform.membership_grid(prob, _grid(prob, args.grid, args.n), kinds=kinds, ny=args.ny, tol=tol)
    header = list(prob.x_names) + list(prob.y_names) + ["gph"] + kinds
    table = [[*r["x"], *r["y"], int(r["gph"]), *(int(r[k]) for k in kinds)] for r in records]
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(table)
    mismatch = {k: sum(r[k] != r["gph"] for r in records) for k in kinds}
    inclusion = sum((r["gph"] and not r.get("SSOC", True)) or (r.get("SSOC", False) and not r.get("KKT", True))
                    for r in records)
    return {"columns": header, "points": len(records), "differs_from_gph": mismatch,
            "inclusion_violations": inclusion, "csv": args.csv,
            "rows": table if args.csv is None and len(table) <= 5000 else None}


def cmd_check_soc(args, prob, tol, warnings):
    x = _vec(args.x, "x", prob.n)
    y = _vec(args.y, "y", prob.m)
    u = _vec(args.u, "u", prob.p)
    kind = args.kind.upper()
    if kind == "UNCONSTRAINED":
        return soc.check_unconstrained_soc(prob, x, y, tol).to_dict()
    if kind == "WSOC":
        return soc.check_wsoc(prob, x, y, u, tol, seed=args.seed).to_dict()
    if kind == "SSOC":
        return soc.check_ssoc(prob, x, y, u, tol, seed=args.seed).to_dict()
    if kind == "BSOC":
        return soc.check_bsoc(prob, x, y, tol=tol, seed=args.seed).to_dict()
    if kind == "FJSOC":
        return soc.check_fjsoc(prob, x, y, tol=tol, seed=args.seed).to_dict()
    if kind == "SLACK":
        if u is None:
            ms = lower.multiplier_set(prob, x, y, tol)
            if not ms.nonempty:
                raise ValueError("no KKT multiplier at this point; pass --u")
            u = ms.representative
        y1, z, u1 = soc.slack_lift(prob, x, y, u, tol)
        passes = soc.check_slack_soc(prob, x, y1, z, u1, tol)
        out = {"lift": {"y": y1, "z": z, "u": u1}, "slack_soc": passes}
        if passes:
            y2, up, verdict = soc.slack_project(prob, x, y1, z, u1, tol)
            out["project"] = {"y": y2, "u": up, "wsoc": verdict.to_dict()}
        return out
    raise ValueError(f"unknown kind {args.kind!r}")


def cmd_calmness(args, prob, tol, warnings):
    gcp = reform.program(prob, args.reform)
    z = _point(gcp, args)
    mu_list = [float(m) for m in args.mu.split(",")] if args.mu else list(DEFAULTS.mu_list)
    radii = [float(r) for r in args.radii.split(",")] if args.radii else list(DEFAULTS.radii)
    if max(mu_list) < 100:
        warnings.append("penalty list tops out below 100; a NOT_REFUTED verdict is weaker than usual")
    out = {"program": gcp.describe(), "candidate": z}
    if args.clarke:
        v = calmness.test_clarke_calmness(gcp, z, radii, max(mu_list), args.budget, tol, args.seed)
    else:
        v = calmness.test_partial_calmness(gcp, z, mu_list, radii, args.budget, tol, args.seed)
    out["verdict"] = v.to_dict()
    out["replay"] = [calmness.replay_witness(gcp, z, w, v.kind, tol)["ok"] for w in v.witnesses]
    return out


def cmd_stationarity(args, prob, tol, warnings):
    kind = args.kind.upper()
    if kind == "CPSOC":
        x = _vec(args.x, "x", prob.n)
        y = _vec(args.y, "y", prob.m)
        return stationarity.check_cpsoc_stationarity(prob, x, y, tol).to_dict()
    gcp = reform.build(prob, args.reform)
    z = _point(gcp, args)
    if kind == "M":
        return stationarity.check_m_stationary(gcp, z, tol).to_dict()
    if kind == "S":
        return stationarity.check_s_stationary(gcp, z, tol).to_dict()
    if kind == "LICQ":
        return {"mpec_licq": stationarity.check_mpec_licq(gcp, z, tol), "point": z}
    raise ValueError(f"unknown stationarity kind {args.kind!r}")


def cmd_table1(args, prob, tol, warnings):
    res = calmness.table1(grid_scale=args.grid_scale, budget=args.budget, seed=args.seed, tol=tol)
    if args.check_stability:
        again = calmness.table1(grid_scale=2 * args.grid_scale, budget=args.budget, seed=args.seed, tol=tol)
        res["doubled_grid_rows"] = again["rows"]
        res["stable"] = again["rows"] == res["rows"]
        if not res["stable"]:
            warnings.append("verdicts changed when the grid density was doubled")
    return res


def cmd_example(args, prob, tol, warnings):
    ex = args.id
    prob = bundled_problem(ex)
    oracle = lower.get_oracle(prob)
    out = {"problem": prob.describe()}
    xs = _grid(prob, None, 21 if prob.n == 1 else 9)
    errs = [abs(oracle(x) - CLOSED_FORM_V[ex](x)) for x in xs]
    out["value_function"] = {"points": len(xs), "max_error_vs_closed_form": max(errs)}

    kinds = ["KKT", "BSOC", "WSOC", "SSOC"]
    records = reform.membership_grid(prob, _grid(prob, None, 11 if prob.n == 1 else 7), kinds=kinds, tol=tol)
    out["sigma"] = {"points": len(records),
                    "differs_from_gph": {k: sum(r[k] != r["gph"] for r in records) for k in kinds}}
    if args.csv_dir:
        Path(args.csv_dir).mkdir(parents=True, exist_ok=True)
        path = Path(args.csv_dir) / f"sigma_{ex.replace('.', '_')}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(prob.x_names) + list(prob.y_names) + ["gph"] + kinds)
            for r in records:
                w.writerow([*r["x"], *r["y"], int(r["gph"]), *(int(r[k]) for k in kinds)])
        out["sigma"]["csv"] = str(path)

    cp = reform.build(prob, "CP")
    z0 = reform.default_candidate(cp)
    v = calmness.test_partial_calmness(cp, z0, budget=args.budget, seed=args.seed, tol=tol)
    out["cp_partial_calmness"] = v.to_dict()
    if ex in ("3.1", "4.6"):
        out["analytic_sequence"] = [calmness.analytic_witness_check(ex, mu) for mu in DEFAULTS.mu_list]

    cert = {}
    if prob.p == 0:
        x0, y0 = cp.xy(z0)
        cert["CPSOC"] = stationarity.check_cpsoc_stationarity(prob, x0, y0, tol).to_dict()
    else:
        cert["CP_M"] = stationarity.check_m_stationary(cp, z0, tol).to_dict()
        rb = reform.build(prob, "R_BSOCP")
        zb = reform.default_candidate(rb)
        cert["R_BSOCP_S"] = stationarity.check_s_stationary(rb, zb, tol).to_dict()
        cert["R_BSOCP_MPEC_LICQ"] = stationarity.check_mpec_licq(rb, zb, tol)
    out["stationarity"] = cert

    if ex == "4.6":
        x0, y0 = cp.xy(z0)
        u0 = cp.u_values(z0)
        y1, z, u1 = soc.slack_lift(prob, x0, y0, u0, tol)
        ok = soc.check_slack_soc(prob, x0, y1, z, u1, tol)
        rt = {"z": z, "slack_soc": ok}
        if ok:
            _, up, verdict = soc.slack_project(prob, x0, y1, z, u1, tol)
            rt.update({"u": up, "wsoc": verdict.to_dict()})
        out["slack_round_trip"] = rt
    return out


COMMANDS = {
    "lower-solve": cmd_lower_solve, "value-fn": cmd_value_fn, "sigma": cmd_sigma,
    "check-soc": cmd_check_soc, "calmness": cmd_calmness, "stationarity": cmd_stationarity,
    "table1": cmd_table1, "example": cmd_example,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", default="4.6", help="problem JSON file or bundled id 3.1/4.6/4.8")
    common.add_argument("--seed", type=int, default=DEFAULTS.seed)
    common.add_argument("--out", help="write the JSON report to this file")
    common.add_argument("--format", choices=("json", "table"), default="json")
    for name in DEFAULT_TOL.to_dict():
        common.add_argument(f"--tol-{name}", type=float, dest=f"tol_{name}", metavar="T")

    ap = argparse.ArgumentParser(prog="bilevel-soc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lower-solve", parents=[common], help="global solution of the lower level at x")
    p.add_argument("--x", required=True)
    p.add_argument("--grid-per-dim", type=int)

    p = sub.add_parser("value-fn", parents=[common], help="tabulate V on an x-grid")
    p.add_argument("--grid", help="lo:hi:n per x-dimension, joined by 'x'")
    p.add_argument("--n", type=int, default=11)

    p = sub.add_parser("sigma", parents=[common], help="membership indicators for Sigma sets")
    p.add_argument("--kinds", default="KKT,BSOC,WSOC,SSOC")
    p.add_argument("--grid")
    p.add_argument("--n", type=int, default=21)
    p.add_argument("--ny", type=int, default=11)
    p.add_argument("--csv", help="write the indicator matrix as CSV")

    p = sub.add_parser("check-soc", parents=[common], help="second-order checks and slack round trip")
    p.add_argument("--kind", default="WSOC", help="WSOC, SSOC, BSOC, FJSOC, UNCONSTRAINED or SLACK")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--u")

    for name, helptext in (("calmness", "falsification search for calmness"),
                           ("stationarity", "M-/S-/CPSOC stationarity and MPEC LICQ")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--reform", default="CP")
        p.add_argument("--point", help="comma-separated program point")
        p.add_argument("--blocks", help='JSON block dict, e.g. {"x":[0,0],"y":[0],"d":[1]}')
        if name == "calmness":
            p.add_argument("--mu")
            p.add_argument("--radii")
            p.add_argument("--budget", type=int, default=DEFAULTS.budget)
            p.add_argument("--clarke", action="store_true")
        else:
            p.add_argument("--kind", default="M", help="M, S, CPSOC or LICQ")
            p.add_argument("--x")
            p.add_argument("--y")

    p = sub.add_parser("table1", parents=[common], help="partial-calmness verdict matrix")
    p.add_argument("--grid-scale", type=int, default=1)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--check-stability", action="store_true", help="rerun with doubled grid density")

    p = sub.add_parser("example", parents=[common], help="walkthrough of a bundled example")
    p.add_argument("id", choices=("3.1", "4.6", "4.8"))
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--csv-dir")
    return ap


def _table(report: dict) -> str:
    res = report["results"]
    lines = [f"{report['command']}: {'ok' if not report.get('errors') else 'error'}"]
    if report["command"] == "table1" and "rows" in res:
        lines.append("example  " + "  ".join(f"{c:>8}" for c in res["columns"]))
        for ex, row in res["rows"].items():
            lines.append(f"{ex:>7}  " + "  ".join(f"{v:>8}" for v in row))
    elif isinstance(res, dict):
        for k, v in res.items():
            s = json.dumps(v)
            lines.append(f"  {k}: {s if len(s) < 100 else s[:97] + '...'}")
    for w in report["warnings"]:
        lines.append(f"  warning: {w}")
    for e in report.get("errors", []):
        lines.append(f"  error: {e}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tol = _tolerances(args)
    warnings: list = []
    errors: list = []
    inputs = {k: v for k, v in vars(args).items() if v is not None and k not in ("out", "format")}
    try:
        prob = _problem(args) if args.command != "table1" else None
        results = COMMANDS[args.command](args, prob, tol, warnings)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        results = None
        errors.append(f"{type(exc).__name__}: {exc}")
    report = _jsonable({
        "command": args.command, "inputs": inputs, "results": results, "warnings": warnings,
        "errors": errors, "config": {"version": __version__, "tolerances": tol.to_dict(),
                                     "seed": args.seed},
    })
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(_table(report) if args.format == "table" else text)
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
