"""Stationarity certificates for combined programs based on the value function.

M- and S-stationarity are linear feasibility problems once the index sets at
the point are fixed and the value-function subdifferential is replaced by the
convex hull of its estimate vertices.  Each branch is solved as an LP with a
minimum-L1 objective, so a reported multiplier vector is a sparse one.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .config import DEFAULT_TOL, DEFAULTS, Tolerances
from .lower import get_oracle, multiplier_set
from .problem import BilevelProblem, GenericCombinedProgram
from . import reform

__all__ = [
    "StatStatus", "StationarityCertificate", "VEstimate", "subdifferential_estimate_V",
    "check_m_stationary", "check_s_stationary", "check_mpec_licq", "check_cpsoc_stationarity",
    "index_sets",
]


class StatStatus(str, Enum):
    HOLDS = "HOLDS"
    REFUTED_OVER_ESTIMATE = "REFUTED_OVER_ESTIMATE"
    UNDETERMINED = "UNDETERMINED"


@dataclass
class StationarityCertificate:
    kind: str                       # M_STAT, S_STAT or CPSOC_STAT
    status: StatStatus
    multipliers: dict = field(default_factory=dict)
    branch: list = field(default_factory=list)
    residual: float | None = None
    note: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.status is StatStatus.HOLDS

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: conv(w) for k, w in v.items()}
            return v
        return {"kind": self.kind, "status": self.status.value, "multipliers": conv(self.multipliers),
                "branch": list(self.branch), "residual": self.residual, "note": self.note,
                "meta": conv(self.meta)}


@dataclass
class VEstimate:
    """Vertices whose convex hull contains the Clarke subdifferential of V at x."""

    x: np.ndarray
    available: bool
    vertices: list
    reason: str = ""

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "available": self.available,
                "vertices": [v.tolist() for v in self.vertices], "reason": self.reason}


def _grad_x(prob: BilevelProblem, expr, x, y) -> np.ndarray:
    env = prob.env(x, y)
    return np.array([expr.diff(v).evaluate(env) for v in prob.x_names], float)


def subdifferential_estimate_V(prob: BilevelProblem, x, tol: Tolerances = DEFAULT_TOL) -> VEstimate:
    """grad_x f(x, y') + sum u'_i grad_x g_i(x, y') over minimizers y' and vertices u' of M1(x, y').

    Unavailable when some minimizer has an empty or unbounded multiplier set.
    """
    x = np.asarray(x, float).reshape(prob.n)
    sol = get_oracle(prob).solution(x)
    verts = []
    for y in sol.minimizers:
        ms = multiplier_set(prob, x, y, tol)
        if not ms.nonempty:
            return VEstimate(x, False, [], f"no KKT multiplier at minimizer {np.round(y, 10).tolist()}")
        if not ms.bounded or not ms.enumerated:
            return VEstimate(x, False, [], f"multiplier set at {np.round(y, 10).tolist()} is not a bounded polytope")
        gf = _grad_x(prob, prob.f, x, y)
        gg = [_grad_x(prob, gi, x, y) for gi in prob.g]
        for u in (ms.vertices if prob.p else [np.zeros(0)]):
            v = gf + sum((ui * gi for ui, gi in zip(u, gg)), np.zeros(prob.n))
            if all(np.linalg.norm(v - w) > 1e-12 for w in verts):
                verts.append(v)
    return VEstimate(x, True, verts)


# index sets and assembled gradients ---------------------------------------------

def index_sets(gcp: GenericCombinedProgram, z, tol: Tolerances = DEFAULT_TOL) -> dict:
    """I_g, I_u, I_0 over the complementarity pairs (0-based positions in comp_pairs)."""
    g = gcp.problem.eval_g(*gcp.xy(z))
    u = gcp.u_values(z)
    out = {"I_g": [], "I_u": [], "I_0": []}
    for k, ((i, _), ui) in enumerate(zip(gcp.comp_pairs, u)):
        active = g[i] >= -tol.active
        if active and ui > tol.active:
            out["I_g"].append(k)
        elif active:
            out["I_0"].append(k)
        else:
            out["I_u"].append(k)
    return out


def _active_H(gcp, z, tol):
    """Boolean mask of H rows whose normal cone is nontrivial at z."""
    if not gcp.H:
        return np.zeros(0, bool)
    Hv = gcp.H_values(z)
    nonpos_active = np.array([c == "nonpos" for c in gcp.H_cone]) & (Hv >= -tol.active)
    return gcp.zero_rows | nonpos_active


def _check_point(gcp, z, tol):
    if gcp.meta.get("membership"):
        raise ValueError(f"{gcp.kind} is a membership program; stationarity needs an explicit reformulation")
    z = np.asarray(z, float).reshape(gcp.dim)
    ok, res = reform.feasible(gcp, z, tol=max(tol.feas, 1e-8), tols=tol)
    if not ok:
        raise ValueError(f"point is infeasible for {gcp.kind}: {res}")
    return z


def _u_columns(gcp):
    cols = np.zeros((gcp.dim, len(gcp.comp_pairs)))
    for k, (_, name) in enumerate(gcp.comp_pairs):
        cols[gcp.index[name], k] = 1.0
    return cols


# M-/S-stationarity ---------------------------------------------------------------

def _solve_branch(A_blocks, rhs, signs):
    """min sum |v| s.t. sum_b A_b v_b = rhs with per-variable sign rules.

    ``signs`` entries: "free", "nonneg" or "zero".  Returns (values, residual)
    or (None, None) when infeasible.
    """
    A = np.hstack(A_blocks) if A_blocks else np.zeros((len(rhs), 0))
    nv = A.shape[1]
    cols, map_pos, map_neg = [], [], []
    for j, s in enumerate(signs):
        if s == "zero":
            continue
        map_pos.append((j, len(cols)))
        cols.append(A[:, j])
        if s == "free":
            map_neg.append((j, len(cols)))
            cols.append(-A[:, j])
    if not cols:
        res = float(np.max(np.abs(rhs), initial=0.0))
        return (np.zeros(nv), res) if res <= 1e-12 else (None, None)
    M = np.column_stack(cols)
    out = linprog(np.ones(M.shape[1]), A_eq=M, b_eq=rhs, bounds=[(0, None)] * M.shape[1], method="highs")
    if out.status != 0:
        return None, None
    v = np.zeros(nv)
    for j, c in map_pos:
        v[j] += out.x[c]
    for j, c in map_neg:
        v[j] -= out.x[c]
    return v, float(np.max(np.abs(A @ v - rhs), initial=0.0))


def _stationarity(gcp, z, strong: bool, tol: Tolerances, max_branch_zero: int | None):
    kind = "S_STAT" if strong else "M_STAT"
    z = _check_point(gcp, z, tol)
    prob = gcp.problem
    x, _ = gcp.xy(z)
    up = gcp.upper(z)
    N = gcp.dim
    sets = index_sets(gcp, z, tol)
    p_c = len(gcp.comp_pairs)
    comp_g = [i for i, _ in gcp.comp_pairs]
    Jg = up["jac_g"][comp_g].T if p_c else np.zeros((N, 0))
    Uc = -_u_columns(gcp)
    HJ = gcp.H_jacobian(z)
    act = _active_H(gcp, z, tol)
    H_signs = ["free" if zr else ("nonneg" if a else "zero") for zr, a in zip(gcp.zero_rows, act)]

    est = subdifferential_estimate_V(prob, x, tol)
    ix = np.array([gcp.index[v] for v in prob.x_names])
    if est.available:
        theta_cols = []
        for xi in est.vertices:
            c = up["grad_f"].copy()
            c[ix] -= xi
            theta_cols.append(c)
        Theta = np.column_stack(theta_cols) if theta_cols else np.zeros((N, 0))
    else:
        Theta = np.zeros((N, 0))

    I0 = sets["I_0"]
    cap = DEFAULTS.max_branch_zero if max_branch_zero is None else max_branch_zero
    if strong:
        patterns = [tuple("both" for _ in I0)]
    elif len(I0) > cap:
        return StationarityCertificate(kind, StatStatus.UNDETERMINED, note=f"|I_0| = {len(I0)} exceeds branch cap {cap}",
                                       meta={"index_sets": sets})
    else:
        patterns = list(itertools.product(("both", "g_zero", "u_zero"), repeat=len(I0)))

    rhs = -up["grad_F"]
    for pat in patterns:
        lg = ["free"] * p_c
        lu = ["free"] * p_c
        for k in sets["I_u"]:
            lg[k] = "zero"
        for k in sets["I_g"]:
            lu[k] = "zero"
        for k, s in zip(I0, pat):
            lg[k] = "zero" if s == "g_zero" else "nonneg"
            lu[k] = "zero" if s == "u_zero" else "nonneg"
        signs = ["nonneg"] * Theta.shape[1] + lg + lu + H_signs
        v, res = _solve_branch([Theta, Jg, Uc, HJ.T], rhs, signs)
        if v is None or res > tol.stat:
            continue
        t = Theta.shape[1]
        theta = v[:t]
        mult = {
            "mu": float(theta.sum()), "theta": theta,
            "xi": (np.asarray(est.vertices).T @ theta / theta.sum()) if theta.sum() > 0 else None,
            "lambda_g": v[t:t + p_c], "lambda_u": v[t + p_c:t + 2 * p_c],
            "lambda_H": v[t + 2 * p_c:],
            "lambda_H_labels": list(gcp.H_labels),
        }
        return StationarityCertificate(kind, StatStatus.HOLDS, mult, list(pat), res,
                                       meta={"index_sets": sets, "estimate": est.to_dict()})
    if not est.available:
        return StationarityCertificate(kind, StatStatus.UNDETERMINED, branch=[],
                                       note=f"only mu = 0 tested: {est.reason}",
                                       meta={"index_sets": sets, "estimate": est.to_dict()})
    return StationarityCertificate(kind, StatStatus.REFUTED_OVER_ESTIMATE,
                                   note=f"all {len(patterns)} branches infeasible over the subdifferential estimate",
                                   meta={"index_sets": sets, "estimate": est.to_dict()})


def check_m_stationary(gcp: GenericCombinedProgram, point, tol: Tolerances = DEFAULT_TOL,
                       max_branch_zero: int | None = None) -> StationarityCertificate:
    """M-stationarity based on the value function, with the I_0 disjunction split into three LPs per index."""
    return _stationarity(gcp, point, False, tol, max_branch_zero)


def check_s_stationary(gcp: GenericCombinedProgram, point, tol: Tolerances = DEFAULT_TOL) -> StationarityCertificate:
    """S-stationarity: a single branch with both multipliers nonnegative on I_0."""
    return _stationarity(gcp, point, True, tol, None)


def verify_certificate(gcp: GenericCombinedProgram, point, cert: StationarityCertificate,
                       tol: Tolerances = DEFAULT_TOL) -> float:
    """Residual of the stationarity equation with the certificate's multipliers plugged back in."""
    z = np.asarray(point, float)
    up = gcp.upper(z)
    m = cert.multipliers
    prob = gcp.problem
    ix = np.array([gcp.index[v] for v in prob.x_names])
    r = up["grad_F"].copy()
    if m["mu"] > 0:
        r += m["mu"] * up["grad_f"]
        r[ix] -= m["mu"] * np.asarray(m["xi"])
    comp_g = [i for i, _ in gcp.comp_pairs]
    if comp_g:
        r += up["jac_g"][comp_g].T @ m["lambda_g"]
        r -= _u_columns(gcp) @ m["lambda_u"]
    if gcp.H:
        r += gcp.H_jacobian(z).T @ m["lambda_H"]
    return float(np.max(np.abs(r), initial=0.0))


def check_mpec_licq(gcp: GenericCombinedProgram, point, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Full column rank of the active constraint gradients.

    Columns are grad g_j for active g_j, -e_{u_j} for j in I_u and I_0, and
    grad H_k for rows whose normal cone is nontrivial.
    """
    z = _check_point(gcp, point, tol)
    sets = index_sets(gcp, z, tol)
    cols = []
    if gcp.comp_pairs:
        up = gcp.upper(z)
        for k in sets["I_g"] + sets["I_0"]:
            cols.append(up["jac_g"][gcp.comp_pairs[k][0]])
        U = _u_columns(gcp)
        for k in sets["I_u"] + sets["I_0"]:
            cols.append(-U[:, k])
    if gcp.H:
        HJ = gcp.H_jacobian(z)
        cols += list(HJ[_active_H(gcp, z, tol)])
    if not cols:
        return True
    A = np.column_stack(cols)
    if A.shape[1] > A.shape[0]:
        return False
    # normalize columns so the test does not depend on row scaling of H
    An = A / np.maximum(np.linalg.norm(A, axis=0), 1e-300)
    s = np.linalg.svd(An, compute_uv=False)
    return bool(np.linalg.norm(A, axis=0).min() > tol.rank and s.min() > tol.rank * max(1.0, s.max()))


# CPSOC -------------------------------------------------------------------------------

def _d_hess_star(prob: BilevelProblem, x, y, N: np.ndarray) -> np.ndarray:
    """Tensor T[v] = N^T (d/dv Hess_yy f) N over all variables v = (x, y)."""
    env = prob.env(x, y)
    out = []
    for v in prob.var_names:
        D = np.array([[e.diff(v).evaluate(env) for e in row] for row in prob.hess_yy_f], float)
        out.append(N.T @ D @ N)
    return np.array(out)


def _psd_project(W):
    W = 0.5 * (W + W.T)
    w, V = np.linalg.eigh(W)
    return (V * np.maximum(w, 0.0)) @ V.T


def check_cpsoc_stationarity(prob: BilevelProblem, x, y, tol: Tolerances = DEFAULT_TOL,
                             max_iter: int = 10_000) -> StationarityCertificate:
    """Multipliers (Omega PSD, mu, beta) for the semidefinite combined program of an unconstrained lower level.

    Solves grad F + mu (grad f - xi x 0) + J^T beta - D(Hess f)* Omega + grad G_A^T eta = 0
    with <Hess f, Omega> = 0.  Since Hess f is PSD the trace condition forces
    Omega = N W N^T with N a basis of its kernel and W PSD.  With dim ker <= 1
    the system is an LP and infeasibility is certified; otherwise alternating
    projections between the affine set and the cone are run, and failure to
    converge is reported as UNDETERMINED.  Active upper-level constraints G
    enter with nonnegative multipliers eta.
    """
    kind = "CPSOC_STAT"
    if prob.p:
        raise ValueError("CPSOC stationarity applies to lower levels without constraints (p = 0)")
    x = np.asarray(x, float).reshape(prob.n)
    y = np.asarray(y, float).reshape(prob.m)
    if prob.m > 3:
        return StationarityCertificate(kind, StatStatus.UNDETERMINED, note="implemented for m <= 3 only")
    d = prob.local(x, y)
    H = 0.5 * (d.hess_f + d.hess_f.T)
    w, V = np.linalg.eigh(H)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol.soc * scale or np.max(np.abs(d.grad_f), initial=0.0) > tol.kkt:
        raise ValueError("point is infeasible for CPSOC (grad_y f != 0 or Hess_yy f not PSD)")
    if prob.q and np.any(prob.eval_G(x, y) > tol.feas):
        raise ValueError("point violates the upper-level constraints")
    Nk = V[:, w <= tol.soc * scale]
    k = Nk.shape[1]
    env = prob.env(x, y)
    names = prob.var_names
    nv = len(names)
    grad_F = np.array([prob.F.diff(v).evaluate(env) for v in names])
    grad_f = np.array([prob.f.diff(v).evaluate(env) for v in names])
    J = np.array([[e.diff(v).evaluate(env) for v in names] for e in prob.grad_y_f])     # m x nv
    G_act = [gj for gj, val in zip(prob.G, prob.eval_G(x, y) if prob.q else []) if val >= -tol.active]
    JG = np.array([[gj.diff(v).evaluate(env) for v in names] for gj in G_act]).reshape(-1, nv)
    T = _d_hess_star(prob, x, y, Nk) if k else np.zeros((nv, 0, 0))

    est = subdifferential_estimate_V(prob, x, tol)
    theta_cols = []
    if est.available:
        for xi in est.vertices:
            c = grad_f.copy()
            c[:prob.n] -= xi
            theta_cols.append(c)
    Theta = np.column_stack(theta_cols) if theta_cols else np.zeros((nv, 0))

    def pack(W_entries, theta, beta, eta):
        return {"theta": theta, "mu": float(theta.sum()), "beta": beta, "eta_G": eta,
                "Omega": Nk @ W_entries @ Nk.T if k else np.zeros((prob.m, prob.m))}

    def residual(Omega, theta, beta, eta):
        DO = np.array([np.sum(np.array([[e.diff(v).evaluate(env) for e in row] for row in prob.hess_yy_f]) * Omega)
                       for v in names])
        r = grad_F + Theta @ theta + J.T @ beta - DO + (JG.T @ eta if len(eta) else 0.0)
        return float(np.max(np.abs(r), initial=0.0))

    if k <= 1:
        Wcol = -T.reshape(nv, -1) if k else np.zeros((nv, 0))
        blocks = [Theta, J.T, Wcol, JG.T]
        signs = (["nonneg"] * Theta.shape[1] + ["free"] * prob.m + ["nonneg"] * Wcol.shape[1]
                 + ["nonneg"] * JG.shape[0])
        v, _ = _solve_branch(blocks, -grad_F, signs)
        if v is not None:
            t, m = Theta.shape[1], prob.m
            theta, beta = v[:t], v[t:t + m]
            Wm = v[t + m:t + m + k].reshape(k, k)
            eta = v[t + m + k:]
            mult = pack(Wm, theta, beta, eta)
            res = residual(mult["Omega"], theta, beta, eta)
            if res <= tol.stat:
                return StationarityCertificate(kind, StatStatus.HOLDS, mult, [], res,
                                               meta={"kernel_dim": k, "trace": float(np.sum(H * mult["Omega"])),
                                                     "estimate": est.to_dict()})
        if not est.available:
            return StationarityCertificate(kind, StatStatus.UNDETERMINED, note=f"only mu = 0 tested: {est.reason}",
                                           meta={"kernel_dim": k})
        return StationarityCertificate(kind, StatStatus.REFUTED_OVER_ESTIMATE,
                                       note="linear system infeasible over the subdifferential estimate",
                                       meta={"kernel_dim": k, "estimate": est.to_dict()})

    # kernel of dimension >= 2: alternating projections on (W, theta, beta, eta)
    iu = np.triu_indices(k)
    sym = [(a, b) for a, b in zip(*iu)]
    Wcols = np.column_stack([-(T[:, a, b] + (T[:, b, a] if a != b else 0.0)) for a, b in sym])
    A = np.hstack([Wcols, Theta, J.T, JG.T])
    b = -grad_F
    Ap = np.linalg.pinv(A)
    v = Ap @ b
    nw, nt = len(sym), Theta.shape[1]

    def cone_proj(v):
        v = v.copy()
        W = np.zeros((k, k))
        for c, (a, bb) in enumerate(sym):
            W[a, bb] = W[bb, a] = v[c]
        W = _psd_project(W)
        v[:nw] = [W[a, bb] for a, bb in sym]
        v[nw:nw + nt] = np.maximum(v[nw:nw + nt], 0.0)
        v[nw + nt + prob.m:] = np.maximum(v[nw + nt + prob.m:], 0.0)
        return v

    for _ in range(max_iter):
        c = cone_proj(v)
        v_new = c - Ap @ (A @ c - b)
        if np.linalg.norm(v_new - v) < 1e-14:
            v = v_new
            break
        v = v_new
    c = cone_proj(v)
    W = np.zeros((k, k))
    for i, (a, bb) in enumerate(sym):
        W[a, bb] = W[bb, a] = c[i]
    theta = c[nw:nw + nt]
    beta = c[nw + nt:nw + nt + prob.m]
    eta = c[nw + nt + prob.m:]
    mult = pack(W, theta, beta, eta)
    res = residual(mult["Omega"], theta, beta, eta)
    if res <= tol.stat:
        return StationarityCertificate(kind, StatStatus.HOLDS, mult, [], res, meta={"kernel_dim": k})
    return StationarityCertificate(kind, StatStatus.UNDETERMINED, mult, [], res,
                                   note="alternating projections did not reach the tolerance",
                                   meta={"kernel_dim": k})
