"""Second-order optimality checks for the lower-level problem.

Covers the unconstrained PSD test, the basic, weak and strong conditions
over KKT multipliers, the Fritz John condition, and the squared-slack lift
and projection between KKT pairs and KKT triples.

Verdict semantics are asymmetric: ``NO`` always comes with an explicit
violating direction, while ``YES`` is exact on subspaces and on small cones
(face enumeration) and sampling-supported otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .cone import PolyhedralCone, cone_quadratic_min, sample_directions
from .config import DEFAULT_TOL, DEFAULTS, Tolerances
from .lower import (InfeasiblePointError, active_set, critical_cone, critical_subspace,
                    multiplier_set, polytope_vertices, slack_critical_cone)
from .problem import BilevelProblem, LocalData

__all__ = [
    "Holds", "SocVerdict", "WrongCheckerError", "SlackProjectionError",
    "check_unconstrained_soc", "check_wsoc", "check_ssoc", "check_bsoc", "check_fjsoc",
    "slack_lift", "slack_project", "check_slack_soc", "slack_soc_value", "slack_hessian",
    "cone_quadratic_min",
]


class Holds(str, Enum):
    YES = "yes"
    NO = "no"
    UNDETERMINED = "undetermined"
    NOT_APPLICABLE = "not_applicable"


class WrongCheckerError(ValueError):
    """The checker does not apply to this problem class."""


class SlackProjectionError(ValueError):
    """A slack triple fails the second-order test and cannot be projected."""


@dataclass
class SocVerdict:
    kind: str
    holds: Holds
    witness_u: np.ndarray | None = None
    witness_d: np.ndarray | None = None
    min_quadratic_value: float = math.inf
    exact: bool = True
    note: str = ""
    meta: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.holds is Holds.YES

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else np.asarray(v, float).tolist()
        val = self.min_quadratic_value
        return {
            "kind": self.kind, "holds": self.holds.value,
            "witness_u": arr(self.witness_u), "witness_d": arr(self.witness_d),
            "min_quadratic_value": val if math.isfinite(val) else ("inf" if val > 0 else "-inf"),
            "exact": self.exact, "note": self.note, **({"meta": self.meta} if self.meta else {}),
        }


def _threshold(H: np.ndarray, tol: Tolerances) -> float:
    return -tol.soc * (1.0 + float(np.linalg.norm(H, 2)) if H.size else 1.0)


def check_unconstrained_soc(prob: BilevelProblem, x, y, tol: Tolerances = DEFAULT_TOL,
                            data: LocalData | None = None) -> SocVerdict:
    """grad_y f = 0 and the Hessian of f in y is positive semidefinite."""
    if prob.p > 0:
        raise WrongCheckerError("check_unconstrained_soc needs p = 0; use the constrained checkers")
    d = data if data is not None else prob.local(x, y)
    H = d.hess_f
    w, V = np.linalg.eigh(H)
    lam = float(w[0])
    if np.linalg.norm(d.grad_f) > tol.kkt:
        return SocVerdict("UNC", Holds.NO, np.zeros(0), None, lam,
                          note=f"not stationary: |grad_y f| = {np.linalg.norm(d.grad_f):.3e}")
    if lam >= _threshold(H, tol):
        return SocVerdict("UNC", Holds.YES, np.zeros(0), None, lam)
    return SocVerdict("UNC", Holds.NO, np.zeros(0), V[:, 0], lam)


def _multiplier_candidates(ms, u=None, n_interior: int = 100, seed: int = 0) -> list:
    """Trial multipliers: the given one, every vertex, then random convex combinations."""
    out = []
    if u is not None:
        out.append(np.asarray(u, float))
    verts = ms.vertices if ms.vertices else ([ms.representative] if ms.representative is not None else [])
    out.extend(verts)
    if len(verts) > 1:
        rng = np.random.default_rng(seed)
        W = rng.dirichlet(np.ones(len(verts)), size=n_interior)
        out.extend(W @ np.array(verts))
    return out


def _valid_multiplier(prob, d: LocalData, u, J, tol: Tolerances) -> bool:
    u = np.asarray(u, float)
    if u.shape != (prob.p,) or np.any(u < -tol.pos):
        return False
    off = np.setdiff1d(np.arange(prob.p), J)
    if off.size and np.any(np.abs(u[off]) > tol.pos):
        return False
    r = d.grad_f + d.jac_g.T @ u
    return float(np.linalg.norm(r)) <= tol.kkt * (1.0 + float(np.linalg.norm(d.grad_f)))


def _exists_u_check(kind, prob, x, y, u, tol, data, n_starts, seed, use_cone: bool) -> SocVerdict:
    d = data if data is not None else prob.local(x, y)
    try:
        ms = multiplier_set(prob, x, y, tol, data=d)
    except InfeasiblePointError as exc:
        return SocVerdict(kind, Holds.NOT_APPLICABLE, note=str(exc))
    if not ms.nonempty:
        return SocVerdict(kind, Holds.NOT_APPLICABLE, note="no KKT multiplier")
    if u is not None and not _valid_multiplier(prob, d, u, ms.active, tol):
        u = None
    cands = _multiplier_candidates(ms, u, seed=seed)
    if not use_cone:
        _, N = critical_subspace(prob, x, y, tol, data=d)
        if N.shape[1] == 0:
            return SocVerdict(kind, Holds.YES, cands[0], None, math.inf, note="critical subspace is {0}")
    best = (-math.inf, None, None, True)
    for cu in cands:
        H = d.hess_lagrangian(1.0, cu)
        if use_cone:
            cone = critical_cone(prob, x, y, cu, tol, data=d)
            val, dvec, exact = cone_quadratic_min(H, cone, n_starts, seed)
        else:
            w, V = np.linalg.eigh(N.T @ H @ N)
            val, dvec, exact = float(w[0]), N @ V[:, 0], True
        if val >= _threshold(H, tol):
            return SocVerdict(kind, Holds.YES, cu, dvec, val, exact=exact)
        if val > best[0]:
            best = (val, cu, dvec, exact)
    val, cu, dvec, exact = best
    if ms.enumerated and ms.bounded:
        single = len(ms.vertices) == 1
        return SocVerdict(kind, Holds.NO, cu, dvec, val, exact=single,
                          note="" if single else "every vertex and interior sample fails")
    return SocVerdict(kind, Holds.UNDETERMINED, cu, dvec, val, exact=False,
                      note="multiplier set not fully enumerated or unbounded")


def check_wsoc(prob: BilevelProblem, x, y, u=None, tol: Tolerances = DEFAULT_TOL,
               data: LocalData | None = None, seed: int = 0) -> SocVerdict:
    """Exists u in M1 with the Lagrangian Hessian PSD on the critical subspace."""
    return _exists_u_check("WSOC", prob, x, y, u, tol, data, DEFAULTS.n_starts, seed, use_cone=False)


def check_ssoc(prob: BilevelProblem, x, y, u=None, tol: Tolerances = DEFAULT_TOL,
               data: LocalData | None = None, n_starts: int | None = None, seed: int = 0) -> SocVerdict:
    """Exists u in M1 with the Lagrangian Hessian copositive on C(y; x)."""
    return _exists_u_check("SSOC", prob, x, y, u, tol, data, n_starts or DEFAULTS.n_starts, seed, use_cone=True)


def _max_over_polytope(base, c, verts, A, b, bounded):
    """max base + c^T v over {v >= 0 : A v = b}; +inf when unbounded above."""
    if verts is not None and bounded:
        return max(base + float(c @ v) for v in verts)
    out = linprog(-c, A_eq=A, b_eq=b, bounds=[(0, None)] * len(c), method="highs")
    if out.status == 3:
        return math.inf
    if out.status != 0:
        return -math.inf
    return base - float(out.fun)


def check_bsoc(prob: BilevelProblem, x, y, n_dirs: int | None = None, tol: Tolerances = DEFAULT_TOL,
               data: LocalData | None = None, seed: int = 0) -> SocVerdict:
    """For every sampled d in C(y; x) some u in M1 gives d^T H(u) d >= 0."""
    d = data if data is not None else prob.local(x, y)
    try:
        ms = multiplier_set(prob, x, y, tol, data=d)
    except InfeasiblePointError as exc:
        return SocVerdict("BSOC", Holds.NOT_APPLICABLE, note=str(exc))
    if not ms.nonempty:
        return SocVerdict("BSOC", Holds.NOT_APPLICABLE, note="no KKT multiplier")
    cone = critical_cone(prob, x, y, None, tol, data=d)
    if cone.is_trivial:
        return SocVerdict("BSOC", Holds.YES, ms.representative, None, math.inf, note="critical cone is {0}")
    dirs = sample_directions(cone, n_dirs or DEFAULTS.n_dirs, seed)
    J = ms.active
    A = d.jac_g[J].T
    verts = [v[J] for v in ms.vertices] if ms.enumerated else None
    Hscale = float(np.linalg.norm(d.hess_lagrangian(1.0, ms.representative), 2))
    thr = -tol.soc * (1.0 + Hscale)
    worst = (math.inf, None)
    for dv in dirs:
        base = float(dv @ d.hess_f @ dv)
        c = np.array([dv @ d.hess_g[j] @ dv for j in J])
        val = _max_over_polytope(base, c, verts, A, -d.grad_f, ms.bounded)
        if val < worst[0]:
            worst = (val, dv)
        if val < thr:
            return SocVerdict("BSOC", Holds.NO, None, dv, val, note="direction defeats every multiplier")
    exact = cone.is_subspace or cone.eq_null.shape[1] <= 1
    return SocVerdict("BSOC", Holds.YES, ms.representative, worst[1], worst[0], exact=exact,
                      note="" if exact else f"sampled {len(dirs)} directions")


def check_fjsoc(prob: BilevelProblem, x, y, n_dirs: int | None = None, tol: Tolerances = DEFAULT_TOL,
                data: LocalData | None = None, seed: int = 0) -> SocVerdict:
    """Fritz John second-order condition over sampled critical directions."""
    d = data if data is not None else prob.local(x, y)
    try:
        J = active_set(prob, x, y, tol=tol, data=d)
    except InfeasiblePointError as exc:
        return SocVerdict("FJSOC", Holds.NOT_APPLICABLE, note=str(exc))
    k = 1 + len(J)
    A = np.zeros((prob.m + 1, k))
    A[:prob.m, 0] = d.grad_f
    A[:prob.m, 1:] = d.jac_g[J].T
    A[prob.m, :] = 1.0
    b = np.zeros(prob.m + 1)
    b[prob.m] = 1.0
    if k <= DEFAULTS.max_vertex_p + 1:
        verts, _ = polytope_vertices(A, b, tol.kkt, tol.rank)
    else:
        out = linprog(np.zeros(k), A_eq=A, b_eq=b, bounds=[(0, None)] * k, method="highs")
        verts = None if out.status == 0 else []
    if verts is not None and not verts:
        return SocVerdict("FJSOC", Holds.NOT_APPLICABLE, note="no Fritz John multiplier")
    cone = critical_cone(prob, x, y, None, tol, data=d)

    def full(v):
        u = np.zeros(prob.p)
        u[J] = v[1:]
        return float(v[0]), u

    rep = full(verts[0]) if verts else None
    if cone.is_trivial:
        return SocVerdict("FJSOC", Holds.YES, None if rep is None else np.concatenate([[rep[0]], rep[1]]),
                          None, math.inf, note="critical cone is {0}")
    dirs = sample_directions(cone, n_dirs or DEFAULTS.n_dirs, seed)
    scale = 1.0 + float(np.linalg.norm(d.hess_f, 2)) + sum(float(np.linalg.norm(d.hess_g[j], 2)) for j in J)
    thr = -tol.soc * scale
    worst = (math.inf, None)
    for dv in dirs:
        c = np.concatenate([[dv @ d.hess_f @ dv], [dv @ d.hess_g[j] @ dv for j in J]])
        val = _max_over_polytope(0.0, c, verts, A, b, True)
        if val < worst[0]:
            worst = (val, dv)
        if val < thr:
            return SocVerdict("FJSOC", Holds.NO, None, dv, val, note="direction defeats every FJ multiplier")
    exact = cone.is_subspace or cone.eq_null.shape[1] <= 1
    wu = None if rep is None else np.concatenate([[rep[0]], rep[1]])
    return SocVerdict("FJSOC", Holds.YES, wu, worst[1], worst[0], exact=exact)


# squared slack -------------------------------------------------------------------

def _kkt_pair_residuals(prob, d: LocalData, u) -> dict:
    u = np.asarray(u, float).reshape(prob.p)
    return {
        "stationarity": float(np.linalg.norm(d.grad_f + d.jac_g.T @ u)),
        "complementarity": float(np.max(np.abs(u * d.g), initial=0.0)),
        "sign": float(max(0.0, -float(np.min(u, initial=0.0)))),
        "feasibility": float(max(0.0, float(np.max(d.g, initial=0.0)))),
    }


def slack_lift(prob: BilevelProblem, x, y, u, tol: Tolerances = DEFAULT_TOL):
    """Map a KKT pair (y, u) of L(x) to the triple (y, z, u) with z = sqrt(-g)."""
    d = prob.local(x, y)
    u = np.asarray(u, float).reshape(prob.p)
    res = _kkt_pair_residuals(prob, d, u)
    if res["feasibility"] > tol.feas:
        raise InfeasiblePointError(f"g(x, y) = {d.g.tolist()} is infeasible")
    scale = 1.0 + float(np.linalg.norm(d.grad_f))
    if res["stationarity"] > tol.kkt * scale or res["sign"] > tol.pos or res["complementarity"] > tol.kkt * scale:
        raise ValueError(f"(y, u) is not a KKT pair: {res}")
    z = np.sqrt(np.maximum(-d.g, 0.0))
    return np.asarray(y, float).copy(), z, u.copy()


def slack_hessian(prob: BilevelProblem, x, y, u, data: LocalData | None = None) -> np.ndarray:
    """Block diag(Hessian of L in y, 2 diag(u)): the Hessian of the slack Lagrangian."""
    d = data if data is not None else prob.local(x, y)
    u = np.asarray(u, float).reshape(prob.p)
    m, p = prob.m, prob.p
    M = np.zeros((m + p, m + p))
    M[:m, :m] = d.hess_lagrangian(1.0, u)
    M[m:, m:] = 2.0 * np.diag(u)
    return M


def slack_soc_value(prob: BilevelProblem, x, y, z, u, tol: Tolerances = DEFAULT_TOL):
    """(min value, direction) of the slack Hessian over the slack critical subspace."""
    cone = slack_critical_cone(prob, x, y, z, tol)
    M = slack_hessian(prob, x, y, u)
    val, dvec, _ = cone_quadratic_min(M, cone)
    return val, dvec, M


def _check_triple(prob, x, y, z, u, tol):
    d = prob.local(x, y)
    z = np.asarray(z, float).reshape(prob.p)
    u = np.asarray(u, float).reshape(prob.p)
    scale = 1.0 + float(np.linalg.norm(d.grad_f))
    stat = float(np.linalg.norm(d.grad_f + d.jac_g.T @ u))
    eq = float(np.max(np.abs(d.g + z ** 2), initial=0.0))
    comp = float(np.max(np.abs(u * z), initial=0.0))
    if stat > tol.kkt * scale or eq > tol.feas or comp > tol.kkt * scale:
        raise ValueError(f"not a KKT triple: stationarity {stat:.2e}, g + z^2 {eq:.2e}, u*z {comp:.2e}")


def check_slack_soc(prob: BilevelProblem, x, y, z, u, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Second-order condition of the squared-slack problem at a KKT triple."""
    val, _, M = slack_soc_value(prob, x, y, z, u, tol)
    return bool(val >= _threshold(M, tol))


def slack_project(prob: BilevelProblem, x, y, z, u, tol: Tolerances = DEFAULT_TOL):
    """Map a KKT triple passing the slack second-order test back to a KKT pair.

    Returns ``(y, u_plus, verdict)`` where ``verdict`` is the WSOC check of
    (y, u_plus).  Raises :class:`SlackProjectionError` when the second-order
    test fails, since the sign of u is then not guaranteed.
    """
    u = np.asarray(u, float).reshape(prob.p)
    if prob.p == 0:
        return np.asarray(y, float).copy(), u.copy(), check_wsoc(prob, x, y, u, tol)
    _check_triple(prob, x, y, z, u, tol)
    val, dvec, M = slack_soc_value(prob, x, y, z, u, tol)
    if val < _threshold(M, tol):
        raise SlackProjectionError(f"slack second-order test fails (value {val:.3e} along {np.round(dvec, 6).tolist()})")
    if np.any(u < -1e-10 * (1.0 + float(np.abs(u).max(initial=0.0)))):
        raise SlackProjectionError(f"negative multiplier survived the second-order test: {u.tolist()}")
    u_plus = np.maximum(u, 0.0)
    return np.asarray(y, float).copy(), u_plus, check_wsoc(prob, x, y, u_plus, tol)
