"""Combined-program reformulations of a bilevel problem.

Every explicit reformulation is a :class:`GenericCombinedProgram` with a
value-gap constraint, complementarity pairs and rows ``H`` targeting a
product of ``{0}`` and nonpositive half-lines.  Reformulations whose only
extra requirement is membership of (x, y) in a stationarity set are built by
:func:`membership_program` instead.
"""
from __future__ import annotations

import dataclasses
import math
from enum import Enum

import numpy as np

from .cone import cone_quadratic_min
from .config import DEFAULT_TOL, Tolerances
from .expr import Const, Expr, Var
from .lower import (InfeasiblePointError, critical_cone, critical_subspace, get_oracle,
                    in_graph_S, multiplier_set)
from .problem import BilevelProblem, GenericCombinedProgram
from . import soc

__all__ = [
    "ReformKind", "MEMBERSHIP_KINDS", "SIGMA_KINDS", "build", "penalize", "feasible",
    "membership_program", "sigma_membership", "objective_value", "side_condition_holds",
    "in_graph_S", "default_candidate",
]


class ReformKind(str, Enum):
    VP = "VP"
    CP = "CP"
    CPFJ = "CPFJ"
    KKTCP = "KKTCP"
    CPSOC = "CPSOC"
    FJSOCP = "FJSOCP"
    R_FJSOCP = "R_FJSOCP"
    R_BSOCP = "R_BSOCP"
    SSOCP = "SSOCP"
    WSOCP = "WSOCP"
    WSOCPZ = "WSOCPZ"
    SOCP_B = "SOCP_B"
    SOCP_W = "SOCP_W"
    SOCP_S = "SOCP_S"


MEMBERSHIP_KINDS = {
    ReformKind.KKTCP: "KKT", ReformKind.FJSOCP: "FJSOC", ReformKind.SOCP_B: "BSOC",
    ReformKind.SOCP_W: "WSOC", ReformKind.SOCP_S: "SSOC",
}
SIGMA_KINDS = ("KKT", "BSOC", "WSOC", "SSOC", "FJSOC")


def _kind(kind) -> ReformKind:
    try:
        return ReformKind(kind.value if isinstance(kind, Enum) else str(kind).upper().replace("-", "_"))
    except ValueError:
        raise ValueError(f"unknown reformulation {kind!r}; choose from {[k.value for k in ReformKind]}") from None


def _sum(terms) -> Expr:
    out = Const(0.0)
    for t in terms:
        out = out + t
    return out


def _names(prefix: str, count: int) -> tuple:
    return tuple(f"{prefix}{i + 1}" for i in range(count))


def build(prob: BilevelProblem, kind) -> GenericCombinedProgram:
    """Explicit combined program of the given kind (value gap included)."""
    kind = _kind(kind)
    if kind in MEMBERSHIP_KINDS:
        raise ValueError(f"{kind.value} is a membership-only reformulation; use membership_program")
    m, p = prob.m, prob.p
    xs, ys = prob.x_names, prob.y_names
    us = _names("u", p)
    U = [Var(n) for n in us]
    gf, Hf = prob.grad_y_f, prob.hess_yy_f
    gg, Hg = prob.grad_y_g, prob.hess_yy_g
    G_rows = [(e, "nonpos", f"G{j + 1}") for j, e in enumerate(prob.G)]
    rows = []
    blocks = [("x", xs), ("y", ys)]
    comp = ()
    side = None

    def grad_L(weight0, weights):
        return [weight0 * gf[k] + _sum(w * gg[i][k] for i, w in enumerate(weights)) for k in range(m)]

    def quad(weight0, weights, D):
        total = Const(0.0)
        for a in range(m):
            for b in range(m):
                h = weight0 * Hf[a][b] + _sum(w * Hg[i][a][b] for i, w in enumerate(weights))
                total = total + D[a] * h * D[b]
        return total

    if kind is ReformKind.VP:
        rows += [(e, "nonpos", f"g{i + 1}") for i, e in enumerate(prob.g)]
    elif kind in (ReformKind.CP, ReformKind.SSOCP, ReformKind.WSOCP):
        blocks.append(("u", us))
        comp = tuple((i, us[i]) for i in range(p))
        rows += [(e, "zero", f"grad_y L[{k + 1}]") for k, e in enumerate(grad_L(Const(1.0), U))]
        side = {ReformKind.SSOCP: "ssoc", ReformKind.WSOCP: "wsoc"}.get(kind)
    elif kind in (ReformKind.CPFJ, ReformKind.R_FJSOCP):
        u0 = Var("u0")
        blocks += [("u0", ("u0",)), ("u", us)]
        comp = tuple((i, us[i]) for i in range(p))
        rows += [(e, "zero", f"grad_y L0[{k + 1}]") for k, e in enumerate(grad_L(u0, U))]
        rows.append((u0 + _sum(U) - 1.0, "zero", "sum u - 1"))
        rows.append((-u0, "nonpos", "-u0"))
        if kind is ReformKind.R_FJSOCP:
            ds = _names("d", m)
            D = [Var(n) for n in ds]
            blocks.append(("d", ds))
            rows.append((-quad(u0, U, D), "nonpos", "-d'H(L0)d"))
            rows.append((_sum(gf[k] * D[k] for k in range(m)), "nonpos", "grad_y f'd"))
            rows += [(U[i] * _sum(gg[i][k] * D[k] for k in range(m)), "nonpos", f"u{i + 1} grad_y g{i + 1}'d")
                     for i in range(p)]
    elif kind is ReformKind.R_BSOCP:
        ds = _names("d", m)
        D = [Var(n) for n in ds]
        blocks += [("u", us), ("d", ds)]
        comp = tuple((i, us[i]) for i in range(p))
        rows += [(e, "zero", f"grad_y L[{k + 1}]") for k, e in enumerate(grad_L(Const(1.0), U))]
        rows += [(U[i] * _sum(gg[i][k] * D[k] for k in range(m)), "zero", f"u{i + 1} grad_y g{i + 1}'d")
                 for i in range(p)]
        rows.append((-quad(Const(1.0), U, D), "nonpos", "-d'H(L)d"))
    elif kind is ReformKind.WSOCPZ:
        zs, ls = _names("z", p), _names("lam", p)
        Z, Lm = [Var(n) for n in zs], [Var(n) for n in ls]
        blocks += [("z", zs), ("lam", ls)]
        rows += [(e, "zero", f"grad_y L[{k + 1}]") for k, e in enumerate(grad_L(Const(1.0), Lm))]
        rows += [(prob.g[i] + Z[i] * Z[i], "zero", f"g{i + 1} + z{i + 1}^2") for i in range(p)]
        rows += [(Lm[i] * Z[i], "zero", f"lam{i + 1} z{i + 1}") for i in range(p)]
        side = "slack_soc"
    elif kind is ReformKind.CPSOC:
        if p:
            raise ValueError("CPSOC is defined for problems without lower-level constraints (p = 0)")
        rows += [(e, "zero", f"grad_y f[{k + 1}]") for k, e in enumerate(gf)]
        side = "psd_hessian"
    rows += G_rows
    return GenericCombinedProgram(
        kind=kind.value, problem=prob, blocks=tuple(blocks), objective=prob.F, has_value_gap=True,
        comp_pairs=comp, H=tuple(r[0] for r in rows), H_cone=tuple(r[1] for r in rows),
        H_labels=tuple(r[2] for r in rows), side_condition=side,
    )


def membership_program(prob: BilevelProblem, kind) -> GenericCombinedProgram:
    """min F s.t. f - V <= 0, (x, y) in Sigma, G <= 0 for a membership-only kind."""
    kind = _kind(kind)
    if kind not in MEMBERSHIP_KINDS:
        raise ValueError(f"{kind.value} has an explicit form; use build")
    rows = [(e, "nonpos", f"G{j + 1}") for j, e in enumerate(prob.G)]
    return GenericCombinedProgram(
        kind=kind.value, problem=prob, blocks=(("x", prob.x_names), ("y", prob.y_names)),
        objective=prob.F, has_value_gap=True, comp_pairs=(),
        H=tuple(r[0] for r in rows), H_cone=tuple(r[1] for r in rows), H_labels=tuple(r[2] for r in rows),
        side_condition=f"sigma:{MEMBERSHIP_KINDS[kind]}", meta={"membership": True},
    )


def program(prob: BilevelProblem, kind) -> GenericCombinedProgram:
    """``build`` or ``membership_program``, whichever applies."""
    kind = _kind(kind)
    return membership_program(prob, kind) if kind in MEMBERSHIP_KINDS else build(prob, kind)


def penalize(gcp: GenericCombinedProgram, mu: float) -> GenericCombinedProgram:
    """Move the value gap into the objective: F + mu (f - V)."""
    mu = float(mu)
    if not mu >= 0.0:
        raise ValueError(f"penalty parameter must be nonnegative, got {mu}")
    if not gcp.has_value_gap:
        raise ValueError("program is already penalized")
    return dataclasses.replace(gcp, has_value_gap=False, penalty=mu)


def objective_value(gcp: GenericCombinedProgram, z, oracle=None) -> float:
    """F(x, y), plus mu (f - V(x)) for a penalized program with mu > 0."""
    z = np.asarray(z, float)
    x, y = gcp.xy(z)
    prob = gcp.problem
    val = prob.eval_F(x, y)
    if gcp.penalty:
        V = (oracle or get_oracle(prob))(x)
        val += gcp.penalty * (prob.eval_f(x, y) - V)
    return float(val)


# side conditions and Sigma membership ---------------------------------------------

def sigma_membership(prob: BilevelProblem, kind: str, x, y, tol: Tolerances = DEFAULT_TOL,
                     data=None) -> bool:
    """Indicator of Sigma_KKT, Sigma_BSOC, Sigma_WSOC, Sigma_SSOC or Sigma_FJSOC."""
    kind = kind.upper()
    if kind not in SIGMA_KINDS:
        raise ValueError(f"unknown stationarity set {kind!r}; choose from {SIGMA_KINDS}")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    d = data if data is not None else prob.local(x, y)
    if prob.p and float(d.g.max()) > tol.feas:
        return False
    if kind == "KKT":
        try:
            return multiplier_set(prob, x, y, tol, data=d).nonempty
        except InfeasiblePointError:
            return False
    check = {"BSOC": soc.check_bsoc, "WSOC": soc.check_wsoc, "SSOC": soc.check_ssoc,
             "FJSOC": soc.check_fjsoc}[kind]
    return check(prob, x, y, tol=tol, data=d).holds is soc.Holds.YES


def side_condition_holds(gcp: GenericCombinedProgram, z, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Evaluate the non-polyhedral requirement of a program at z (True when absent)."""
    sc = gcp.side_condition
    if sc is None:
        return True
    prob = gcp.problem
    x, y = gcp.xy(z)
    if sc.startswith("sigma:"):
        return sigma_membership(prob, sc.split(":", 1)[1], x, y, tol)
    d = prob.local(x, y)
    if sc == "psd_hessian":
        H = d.hess_f
        return bool(np.linalg.eigvalsh(H)[0] >= -tol.soc * (1.0 + np.linalg.norm(H, 2)))
    if sc in ("ssoc", "wsoc"):
        u = gcp.block(z, "u")
        H = d.hess_lagrangian(1.0, u)
        thr = -tol.soc * (1.0 + np.linalg.norm(H, 2))
        try:
            if sc == "wsoc":
                _, N = critical_subspace(prob, x, y, tol, data=d)
                return N.shape[1] == 0 or bool(np.linalg.eigvalsh(N.T @ H @ N)[0] >= thr)
            cone = critical_cone(prob, x, y, u, tol, data=d)
            return bool(cone_quadratic_min(H, cone)[0] >= thr)
        except InfeasiblePointError:
            return False
    if sc == "slack_soc":
        zz, lam = gcp.block(z, "z"), gcp.block(z, "lam")
        try:
            return soc.check_slack_soc(prob, x, y, zz, lam, tol)
        except InfeasiblePointError:
            return False
    raise ValueError(f"unknown side condition {sc!r}")


# feasibility --------------------------------------------------------------------

def _proj_comp(a: float, b: float):
    """Nearest point of {a >= 0, b >= 0, a b = 0} to (a, b)."""
    c1 = (max(a, 0.0), 0.0)
    c2 = (0.0, max(b, 0.0))
    d1 = (a - c1[0]) ** 2 + (b - c1[1]) ** 2
    d2 = (a - c2[0]) ** 2 + (b - c2[1]) ** 2
    return c1 if d1 <= d2 else c2


def residuals(gcp: GenericCombinedProgram, z, tol: Tolerances = DEFAULT_TOL, oracle=None,
              with_side: bool = True) -> dict:
    """Constraint residuals of a program at z (value gap, complementarity, H, boxes, side)."""
    z = np.asarray(z, float).reshape(gcp.dim)
    prob = gcp.problem
    x, y = gcp.xy(z)
    out = {}
    if gcp.has_value_gap:
        V = (oracle or get_oracle(prob))(x)
        out["value_gap"] = max(0.0, prob.eval_f(x, y) - V) if math.isfinite(V) else math.inf
    if gcp.comp_pairs:
        g = prob.eval_g(x, y)
        u = gcp.u_values(z)
        out["complementarity"] = float(max(abs(min(-g[i], uv)) for (i, _), uv in zip(gcp.comp_pairs, u)))
    Hv = gcp.H_values(z)
    zr = gcp.zero_rows
    hz = float(np.max(np.abs(Hv[zr]), initial=0.0)) if Hv.size else 0.0
    hn = float(np.max(np.maximum(Hv[~zr], 0.0), initial=0.0)) if Hv.size else 0.0
    out["H_zero"] = hz
    out["H_nonpos"] = hn
    box = max(float(np.max(np.maximum(prob.x_box[:, 0] - x, x - prob.x_box[:, 1]), initial=0.0)),
              float(np.max(np.maximum(prob.y_box[:, 0] - y, y - prob.y_box[:, 1]), initial=0.0)))
    out["box"] = max(box, 0.0)
    if with_side and gcp.side_condition is not None:
        out["side_condition"] = 0.0 if side_condition_holds(gcp, z, tol) else 1.0
    return out


def feasible(gcp: GenericCombinedProgram, z, tol: float = 1e-8, tols: Tolerances = DEFAULT_TOL,
             oracle=None):
    """(ok, residual report) for the point z; ok iff every residual is <= tol."""
    res = residuals(gcp, z, tols, oracle)
    ok = all(v <= tol for v in res.values())
    return ok, res


def perturbation(gcp: GenericCombinedProgram, z, oracle=None) -> dict:
    """Smallest (r1, r2, r3, P) placing z in the perturbed feasible set.

    r1 shifts the value gap, (r2, r3) shift the complementarity pairs and P
    shifts H onto C.  Boxes are not perturbed.
    """
    z = np.asarray(z, float)
    prob = gcp.problem
    x, y = gcp.xy(z)
    r1 = np.zeros(0)
    if gcp.has_value_gap:
        V = (oracle or get_oracle(prob))(x)
        r1 = np.array([-max(0.0, prob.eval_f(x, y) - V)])
    r2, r3 = [], []
    if gcp.comp_pairs:
        g = prob.eval_g(x, y)
        u = gcp.u_values(z)
        for (i, _), uv in zip(gcp.comp_pairs, u):
            a, b = _proj_comp(-g[i], uv)
            r2.append(-g[i] - a)
            r3.append(b - uv)
    Hv = gcp.H_values(z)
    P = np.where(gcp.zero_rows, -Hv, -np.maximum(Hv, 0.0)) if Hv.size else np.zeros(0)
    vec = np.concatenate([r1, np.array(r2), np.array(r3), P])
    return {"r1": r1.tolist(), "r2": list(map(float, r2)), "r3": list(map(float, r3)),
            "P": P.tolist(), "norm": float(np.linalg.norm(vec))}


def default_candidate(gcp: GenericCombinedProgram, name: str | None = None) -> np.ndarray:
    """Assemble a program point from the problem file's candidate entry.

    Missing blocks are filled from the lower level: u by the multiplier set
    representative, z by sqrt(-g), lam by u, u0 by 1 and d by the first unit
    vector.
    """
    prob = gcp.problem
    entries = list(prob.candidates)
    if not entries:
        raise ValueError("problem file has no candidates")
    entry = entries[0]
    if name is not None:
        for e in entries:
            if e.get("name") == name:
                entry = e
                break
        else:
            raise KeyError(f"no candidate named {name!r}")
    return point_from_blocks(gcp, entry)


def point_from_blocks(gcp: GenericCombinedProgram, blocks: dict) -> np.ndarray:
    """Program point from named blocks; x and y default to the first bundled candidate."""
    prob = gcp.problem
    if "x" not in blocks or "y" not in blocks:
        if not prob.candidates:
            raise ValueError("blocks need x and y when the problem has no candidates")
        blocks = {**prob.candidates[0], **blocks}
    x = np.asarray(blocks.get("x"), float).reshape(prob.n)
    y = np.asarray(blocks.get("y"), float).reshape(prob.m)
    vals = {"x": x, "y": y}
    u = blocks.get("u")
    if u is None or len(u) != prob.p:
        ms = multiplier_set(prob, x, y)
        u = ms.representative if ms.representative is not None else np.zeros(prob.p)
    vals["u"] = np.asarray(u, float)
    vals["u0"] = np.atleast_1d(float(blocks.get("u0", 1.0)))
    if gcp.has_block("u0"):
        # Fritz John weights are normalised to sum to one
        total = float(vals["u0"][0] + vals["u"].sum())
        if total > 0 and abs(total - 1.0) > 1e-12:
            vals["u0"] = vals["u0"] / total
            vals["u"] = vals["u"] / total
    d = blocks.get("d")
    if d is None or len(d) != prob.m:
        d = np.eye(prob.m)[0]
    vals["d"] = np.asarray(d, float)
    zz = blocks.get("z")
    if zz is None or len(zz) != prob.p:
        zz = np.sqrt(np.maximum(-prob.eval_g(x, y), 0.0))
    vals["z"] = np.asarray(zz, float)
    lam = blocks.get("lambda", blocks.get("lam"))
    if lam is None or len(lam) != prob.p:
        lam = vals["u"]
    vals["lam"] = np.asarray(lam, float)
    z = np.zeros(gcp.dim)
    for bname, names in gcp.blocks:
        src = vals[bname]
        for k, v in enumerate(names):
            z[gcp.index[v]] = src[k]
    return z


def grid_candidates(prob: BilevelProblem, x, ny: int = 11, tol: Tolerances = DEFAULT_TOL, oracle=None) -> list:
    """y points probed at x: stationary candidates, global minimizers and a y-grid."""
    from .lower import stationary_candidates
    oracle = oracle or get_oracle(prob)
    ys = list(stationary_candidates(prob, x, tol))
    ys += list(oracle.solution(x).minimizers)
    axes = [np.linspace(lo, hi, ny) for lo, hi in prob.y_box]
    ys += [np.array(pt) for pt in np.array(np.meshgrid(*axes, indexing="ij")).reshape(prob.m, -1).T]
    out = []
    for y in ys:
        if all(np.linalg.norm(y - w) > 1e-12 for w in out):
            out.append(np.asarray(y, float))
    return out


def membership_grid(prob: BilevelProblem, x_points, kinds=SIGMA_KINDS, ny: int = 11,
                    tol: Tolerances = DEFAULT_TOL, oracle=None) -> list:
    """Indicator records over probe points: one dict per (x, y) with gph S and each Sigma kind.

    ``gph`` is :func:`in_graph_S`; each Sigma column is the corresponding
    membership test on the same point.
    """
    from .lower import in_graph_S
    oracle = oracle or get_oracle(prob)
    records = []
    for x in x_points:
        x = np.asarray(x, float).reshape(prob.n)
        for y in grid_candidates(prob, x, ny, tol, oracle):
            d = prob.local(x, y)
            feas = not prob.p or float(d.g.max()) <= tol.feas
            rec = {"x": x, "y": y, "gph": in_graph_S(prob, x, y, tol, oracle)}
            for k in kinds:
                rec[k] = bool(feas and sigma_membership(prob, k, x, y, tol, data=d))
            records.append(rec)
    return records
