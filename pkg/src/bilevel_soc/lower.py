"""Global lower-level solving and first-order lower-level objects.

The solver scans a grid over ``y_box``, keeps the discrete local minima and
polishes each with Newton steps on the KKT system of every nearby active
set.  Multiplier sets, critical cones and critical subspaces are computed
from :class:`~bilevel_soc.problem.LocalData`.
"""
from __future__ import annotations

import itertools
import logging
import math
import threading
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .cone import PolyhedralCone, null_basis
from .config import DEFAULT_TOL, DEFAULTS, Tolerances
from .problem import BilevelProblem, LocalData

__all__ = [
    "InfeasiblePointError", "LowerLevelSolution", "MultiplierSet", "ValueOracle",
    "solve_lower", "value_function", "get_oracle", "active_set", "multiplier_set",
    "critical_cone", "critical_subspace", "slack_critical_cone", "stationary_candidates",
    "in_graph_S", "polytope_vertices",
]

log = logging.getLogger(__name__)


class InfeasiblePointError(ValueError):
    """A point violates the lower-level constraints beyond tolerance."""


@dataclass
class LowerLevelSolution:
    x: np.ndarray
    minimizers: list
    value: float
    status: str = "ok"                  # "ok" or "infeasible"
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "minimizers": [y.tolist() for y in self.minimizers],
            "value": self.value if math.isfinite(self.value) else None,
            "status": self.status,
            "warnings": list(self.warnings),
            "solver_meta": dict(self.meta),
        }


# grid scan -------------------------------------------------------------------

def _axis(lo: float, hi: float, count: int) -> np.ndarray:
    ax = np.linspace(lo, hi, count)
    h = (hi - lo) / max(count - 1, 1)
    ax[np.abs(ax) < 1e-9 * max(h, 1e-300)] = 0.0
    return ax


def _grid_local_minima(fvals: np.ndarray, keep: int) -> list:
    """Flat indices of discrete local minima (infeasible cells hold +inf)."""
    shape = fvals.shape
    m = len(shape)
    padded = np.pad(fvals, 1, mode="constant", constant_values=np.inf)
    centre = tuple(slice(1, -1) for _ in range(m))
    is_min = np.isfinite(fvals)
    for offset in itertools.product((-1, 0, 1), repeat=m):
        if not any(offset):
            continue
        sl = tuple(slice(1 + o, padded.shape[k] - 1 + o) for k, o in enumerate(offset))
        is_min &= fvals <= padded[sl]
    idx = np.flatnonzero(is_min)
    if idx.size == 0:
        finite = np.flatnonzero(np.isfinite(fvals))
        if finite.size == 0:
            return []
        idx = finite[[int(np.argmin(fvals.ravel()[finite]))]]
    order = np.argsort(fvals.ravel()[idx], kind="stable")
    return [int(i) for i in idx[order[:keep]]]


def _box_rows(prob: BilevelProblem, y: np.ndarray, near: float):
    """Box faces within ``near`` of y, as (sign, coord, bound) triples."""
    rows = []
    for k in range(prob.m):
        lo, hi = prob.y_box[k]
        if y[k] - lo <= near:
            rows.append((-1.0, k, lo))
        if hi - y[k] <= near:
            rows.append((1.0, k, hi))
    return rows


def _newton_active(prob: BilevelProblem, x, y0, g_idx, box_rows, steps: int, trust: float):
    """Newton on grad f + sum lam grad c = 0, c_A = 0 for the given active set."""
    m = prob.m
    k = len(g_idx) + len(box_rows)
    if k > m:
        return None
    y = y0.astype(float).copy()
    lam = np.zeros(k)
    for it in range(steps):
        d = prob.local(x, y)
        J = np.zeros((k, m))
        c = np.zeros(k)
        Hc = np.zeros((m, m))
        for r, i in enumerate(g_idx):
            J[r] = d.jac_g[i]
            c[r] = d.g[i]
        for r, (s, j, b) in enumerate(box_rows, start=len(g_idx)):
            J[r, j] = s
            c[r] = s * (y[j] - b)
        if it == 0 and k:
            lam = -np.linalg.lstsq(J.T, d.grad_f, rcond=None)[0]
        for r, i in enumerate(g_idx):
            Hc = Hc + lam[r] * d.hess_g[i]
        H = d.hess_f + Hc
        res = np.concatenate([d.grad_f + J.T @ lam, c])
        if not np.all(np.isfinite(res)):
            return None
        K = np.block([[H, J.T], [J, np.zeros((k, k))]]) if k else H
        step = np.linalg.lstsq(K, -res, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return None
        y = y + step[:m]
        lam = lam + step[m:]
        if np.linalg.norm(y - y0) > trust:
            return None
        if np.linalg.norm(step[:m]) <= 1e-15 * (1.0 + np.linalg.norm(y)):
            break
    return y


def _polish(prob: BilevelProblem, x, y0: np.ndarray, h: np.ndarray, steps: int, tol: Tolerances):
    """Best feasible point among the grid point and its active-set Newton limits."""
    d0 = prob.local(x, y0)
    near_scale = 3.0 * float(np.max(h)) * math.sqrt(prob.m)
    near_g = [i for i in range(prob.p)
              if d0.g[i] >= -near_scale * (1.0 + np.linalg.norm(d0.jac_g[i]))]
    box = _box_rows(prob, y0, near_scale)
    trust = 6.0 * float(np.max(h)) * math.sqrt(prob.m) + 1e-9
    best_y, best_f, iters = y0, d0.f, 0
    items = [("g", i) for i in near_g] + [("b", r) for r in box]
    for size in range(0, min(len(items), prob.m) + 1):
        for combo in itertools.combinations(items, size):
            g_idx = [i for t, i in combo if t == "g"]
            b_rows = [r for t, r in combo if t == "b"]
            y = _newton_active(prob, x, y0, g_idx, b_rows, steps, trust)
            iters += 1
            if y is None:
                continue
            if np.any(y < prob.y_box[:, 0] - 1e-12) or np.any(y > prob.y_box[:, 1] + 1e-12):
                continue
            y = np.clip(y, prob.y_box[:, 0], prob.y_box[:, 1])
            fv_g = prob.fg_vectorized(*x, *y)
            if prob.p and float(np.max(fv_g[1:])) > tol.feas * 1e-2:
                continue
            fv = float(fv_g[0])
            if fv <= best_f + 1e-15 * (1.0 + abs(best_f)):
                best_y, best_f = y, fv
    return best_y, best_f, iters


def _cluster(points, values, radius):
    order = np.argsort(values, kind="stable")
    reps = []
    for i in order:
        if all(np.linalg.norm(points[i] - points[j]) > radius for j in reps):
            reps.append(i)
    return reps


def solve_lower(prob: BilevelProblem, x, grid_per_dim: int | None = None, polish_steps: int = 100,
                tol: Tolerances = DEFAULT_TOL, keep: int = 8) -> LowerLevelSolution:
    """Global solution of L(x) over ``y_box``: grid scan, polish, cluster."""
    x = np.asarray(x, dtype=float).reshape(prob.n)
    N = grid_per_dim or DEFAULTS.grid_for(prob.m)
    if N < 2:
        raise ValueError("grid_per_dim must be at least 2")
    axes = [_axis(lo, hi, N) for lo, hi in prob.y_box]
    h = np.array([(hi - lo) / (N - 1) for lo, hi in prob.y_box])
    mesh = np.meshgrid(*axes, indexing="ij") if prob.m > 1 else [axes[0]]
    vals = prob.fg_vectorized(*x, *mesh)
    fvals = np.array(vals[0], dtype=float)
    feas = np.ones(fvals.shape, dtype=bool)
    if prob.p:
        feas = np.all(vals[1:] <= 0.0, axis=0)
    fvals = np.where(feas & np.isfinite(fvals), fvals, np.inf)
    if not np.any(np.isfinite(fvals)):
        return LowerLevelSolution(x, [], math.inf, "infeasible", ["no feasible grid point"],
                                  {"grid_per_dim": N, "polish_iterations": 0})
    seeds = _grid_local_minima(fvals, keep)
    pts, fs, total_iter = [], [], 0
    grid_min = float(np.min(fvals))
    for flat in seeds:
        idx = np.unravel_index(flat, fvals.shape)
        y0 = np.array([axes[k][idx[k]] for k in range(prob.m)])
        y, fv, it = _polish(prob, x, y0, h, polish_steps, tol)
        total_iter += it
        pts.append(y)
        fs.append(fv)
    fs = np.array(fs)
    V = float(min(fs.min(), grid_min))
    within = [i for i in range(len(pts)) if fs[i] <= V + tol.val * (1.0 + abs(V))]
    reps = _cluster([pts[i] for i in within], fs[within], tol.cluster)
    minimizers = [pts[within[r]] for r in reps]
    minimizers.sort(key=lambda v: tuple(v))
    warnings = []
    for y in minimizers:
        on_face = np.any(np.isclose(y, prob.y_box[:, 0], atol=1e-9)) or np.any(np.isclose(y, prob.y_box[:, 1], atol=1e-9))
        if on_face:
            g_active = prob.p and np.any(prob.eval_g(x, y) >= -tol.active)
            if not g_active:
                warnings.append(f"minimizer {y.tolist()} touches the search box with no active constraint")
    return LowerLevelSolution(x, minimizers, V, "ok", warnings,
                              {"grid_per_dim": N, "polish_iterations": total_iter, "seeds": len(seeds)})


# value oracle -------------------------------------------------------------------

class ValueOracle:
    """Memoised V(x) keyed by x quantised to ``quantum``; safe across threads."""

    def __init__(self, prob: BilevelProblem, tol: Tolerances = DEFAULT_TOL, quantum: float = 1e-12,
                 grid_per_dim: int | None = None):
        self._prob_ref = weakref.ref(prob)
        self.tol = tol
        self.quantum = quantum
        self.grid_per_dim = grid_per_dim
        self._table: dict = {}
        self._lock = threading.Lock()
        self.calls = 0
        self.misses = 0

    def key(self, x) -> tuple:
        return tuple(int(round(v / self.quantum)) for v in np.asarray(x, float).reshape(-1))

    def solution(self, x) -> LowerLevelSolution:
        k = self.key(x)
        with self._lock:
            self.calls += 1
            hit = self._table.get(k)
        if hit is not None:
            return hit
        sol = solve_lower(self._prob_ref(), np.asarray(x, float), self.grid_per_dim, tol=self.tol)
        with self._lock:
            self.misses += 1
            self._table.setdefault(k, sol)
            return self._table[k]

    def __call__(self, x) -> float:
        return self.solution(x).value


_ORACLES: "weakref.WeakKeyDictionary[BilevelProblem, ValueOracle]" = weakref.WeakKeyDictionary()
_ORACLE_LOCK = threading.Lock()


def get_oracle(prob: BilevelProblem) -> ValueOracle:
    with _ORACLE_LOCK:
        if prob not in _ORACLES:
            _ORACLES[prob] = ValueOracle(prob)
        return _ORACLES[prob]


def value_function(prob: BilevelProblem, x) -> float:
    """V(x) with default settings; +inf when L(x) is infeasible on the box."""
    return get_oracle(prob)(x)


# active sets and multipliers ---------------------------------------------------------

def _data(prob, x, y, data):
    return data if data is not None else prob.local(x, y)


def active_set(prob: BilevelProblem, x, y, tol_active: float | None = None,
               tol: Tolerances = DEFAULT_TOL, data: LocalData | None = None) -> np.ndarray:
    """J0(x, y) = {j : g_j >= -tol_active}; raises for infeasible points."""
    d = _data(prob, x, y, data)
    ta = tol.active if tol_active is None else tol_active
    if prob.p and float(d.g.max()) > tol.feas:
        raise InfeasiblePointError(f"g(x, y) = {d.g.tolist()} violates feasibility")
    return d.active(ta)


def polytope_vertices(A: np.ndarray, b: np.ndarray, tol: float = 1e-9, rank_tol: float = 1e-10):
    """Vertices of {v >= 0 : A v = b} by enumerating linearly independent supports.

    Returns ``(vertices, residuals)``; the polyhedron is pointed, so it is
    nonempty exactly when the list is nonempty.
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    r, k = A.shape
    bscale = 1.0 + float(np.linalg.norm(b))
    verts, res = [], []
    for size in range(0, min(r, k) + 1):
        for S in itertools.combinations(range(k), size):
            S = list(S)
            if S:
                AS = A[:, S]
                sv = np.linalg.svd(AS, compute_uv=False)
                if sv[-1] <= rank_tol * max(1.0, sv[0]):
                    continue
                vS = np.linalg.lstsq(AS, b, rcond=None)[0]
            else:
                vS = np.zeros(0)
            v = np.zeros(k)
            v[S] = vS
            resid = float(np.linalg.norm(A @ v - b))
            if resid > tol * bscale:
                continue
            if np.any(v < -tol):
                continue
            v = np.maximum(v, 0.0)
            if all(np.linalg.norm(v - w) > 1e-10 * (1 + np.linalg.norm(v)) for w in verts):
                verts.append(v)
                res.append(resid)
    return verts, res


def _recession_nonzero(A: np.ndarray) -> bool:
    """True when {r >= 0 : A r = 0} contains a nonzero vector."""
    r, k = A.shape
    if k == 0:
        return False
    if r and np.linalg.matrix_rank(A) == k:
        return False
    out = linprog(-np.ones(k), A_eq=A if r else None, b_eq=np.zeros(r) if r else None,
                  bounds=[(0, 1)] * k, method="highs")
    return bool(out.status == 0 and -out.fun > 1e-9)


@dataclass
class MultiplierSet:
    """M1(x, y) = {u >= 0 : grad f + sum u_i grad g_i = 0, u_i = 0 off J0}."""

    nonempty: bool
    active: np.ndarray
    vertices: list
    representative: np.ndarray | None
    bounded: bool
    enumerated: bool
    residual: float
    p: int

    @property
    def is_singleton(self) -> bool:
        return self.nonempty and self.bounded and len(self.vertices) == 1

    def to_dict(self) -> dict:
        return {
            "nonempty": self.nonempty,
            "active": [int(j) + 1 for j in self.active],
            "vertices": [v.tolist() for v in self.vertices],
            "representative": None if self.representative is None else self.representative.tolist(),
            "bounded": self.bounded,
            "enumerated": self.enumerated,
            "residual": self.residual,
        }


def multiplier_set(prob: BilevelProblem, x, y, tol: Tolerances = DEFAULT_TOL,
                   data: LocalData | None = None, max_vertex_p: int | None = None) -> MultiplierSet:
    d = _data(prob, x, y, data)
    J = active_set(prob, x, y, tol=tol, data=d)
    A = d.jac_g[J].T                    # m x |J|
    b = -d.grad_f
    cap = DEFAULTS.max_vertex_p if max_vertex_p is None else max_vertex_p
    if len(J) <= cap:
        verts_J, res = polytope_vertices(A, b, tol.kkt, tol.rank)
        enumerated = True
    else:
        out = linprog(np.zeros(len(J)), A_eq=A, b_eq=b, bounds=[(0, None)] * len(J), method="highs")
        verts_J, res = ([out.x], [float(np.linalg.norm(A @ out.x - b))]) if out.status == 0 else ([], [])
        if verts_J and res[0] > tol.kkt * (1 + np.linalg.norm(b)):
            verts_J, res = [], []
        enumerated = False
    full = []
    for v in verts_J:
        u = np.zeros(prob.p)
        u[J] = v
        full.append(u)
    bounded = not _recession_nonzero(A) if full else True
    rep = full[0] if full else None
    return MultiplierSet(bool(full), J, full if enumerated else [], rep, bounded, enumerated,
                         float(min(res)) if res else math.inf, prob.p)


# cones ----------------------------------------------------------------------------

def critical_cone(prob: BilevelProblem, x, y, u=None, tol: Tolerances = DEFAULT_TOL,
                  data: LocalData | None = None) -> PolyhedralCone:
    """C(y; x); with a multiplier u the equality/inequality split follows u."""
    d = _data(prob, x, y, data)
    J = active_set(prob, x, y, tol=tol, data=d)
    m = prob.m
    if u is None:
        rows = [d.grad_f] if np.linalg.norm(d.grad_f) > tol.kkt else []
        rows += [d.jac_g[j] for j in J]
        return PolyhedralCone(np.zeros((0, m)), np.array(rows).reshape(-1, m), m, tol.rank)
    u = np.asarray(u, float).reshape(prob.p)
    E = [d.jac_g[j] for j in J if u[j] > tol.pos]
    I = [d.jac_g[j] for j in J if u[j] <= tol.pos]
    return PolyhedralCone(np.array(E).reshape(-1, m), np.array(I).reshape(-1, m), m, tol.rank)


def critical_subspace(prob: BilevelProblem, x, y, tol: Tolerances = DEFAULT_TOL,
                      data: LocalData | None = None):
    """S(y; x) as a subspace cone together with an orthonormal basis (columns)."""
    d = _data(prob, x, y, data)
    J = active_set(prob, x, y, tol=tol, data=d)
    cone = PolyhedralCone.subspace(d.jac_g[J].reshape(-1, prob.m), prob.m, tol_rank=tol.rank)
    return cone, cone.eq_null


def slack_critical_cone(prob: BilevelProblem, x, y, z, tol: Tolerances = DEFAULT_TOL,
                        data: LocalData | None = None) -> PolyhedralCone:
    """{(d, nu) : grad g_i^T d + 2 z_i nu_i = 0 for all i} in R^(m+p)."""
    d = _data(prob, x, y, data)
    z = np.asarray(z, float).reshape(prob.p)
    if prob.p and float(np.max(np.abs(d.g + z ** 2))) > tol.feas:
        raise InfeasiblePointError("g(x, y) + z^2 != 0")
    m, p = prob.m, prob.p
    E = np.zeros((p, m + p))
    E[:, :m] = d.jac_g
    E[np.arange(p), m + np.arange(p)] = 2.0 * z
    # keep explicit zero rows out, but never drop rows that constrain nu
    return PolyhedralCone.subspace(E, m + p, tol_rank=tol.rank)


# stationary candidates ------------------------------------------------------------

def _batched_newton(prob: BilevelProblem, x, seeds: np.ndarray, J: tuple, iters: int):
    """Solve [grad f + sum lam_j grad g_j; g_J] = 0 (or g_J = 0 when |J| = m)."""
    m, p = prob.m, prob.p
    k = len(J)
    S = seeds.shape[0]
    Y = seeds.T.copy()                 # (m, S)
    lam = np.zeros((k, S))
    vertex = k == m and k > 0
    span = float(np.max(prob.y_box[:, 1] - prob.y_box[:, 0]))
    per_g = 1 + m + m * m

    def unpack(Yc):
        out = prob.newton_kernel(*x, *Yc)
        gf = out[:m]
        hf = out[m:m + m * m].reshape(m, m, S)
        gs, jg, hg = [], [], []
        base = m + m * m
        for i in range(p):
            blk = out[base + i * per_g: base + (i + 1) * per_g]
            gs.append(blk[0])
            jg.append(blk[1:1 + m])
            hg.append(blk[1 + m:].reshape(m, m, S))
        return gf, hf, gs, jg, hg

    res_norm = np.full(S, np.inf)
    for it in range(iters):
        gf, hf, gs, jg, hg = unpack(Y)
        if vertex:
            R = np.stack([gs[j] for j in J])                         # (m, S)
            K = np.stack([jg[j] for j in J]).transpose(2, 0, 1)     # (S, m, m)
            res = R.T
        else:
            JJ = np.stack([jg[j] for j in J]) if k else np.zeros((0, m, S))  # (k, m, S)
            if it == 0 and k:
                for s in range(S):
                    lam[:, s] = -np.linalg.lstsq(JJ[:, :, s].T, gf[:, s], rcond=None)[0]
            HL = hf.copy()
            for r, j in enumerate(J):
                HL = HL + lam[r][None, None, :] * hg[j]
            stat = gf + np.einsum("kms,ks->ms", JJ, lam)
            cons = np.stack([gs[j] for j in J]) if k else np.zeros((0, S))
            res = np.concatenate([stat, cons]).T                    # (S, m+k)
            K = np.zeros((S, m + k, m + k))
            K[:, :m, :m] = HL.transpose(2, 0, 1)
            if k:
                K[:, :m, m:] = JJ.transpose(2, 1, 0)
                K[:, m:, :m] = JJ.transpose(2, 0, 1)
        res_norm = np.linalg.norm(np.nan_to_num(res, nan=np.inf), axis=1)
        with np.errstate(all="ignore"):
            Kc = np.nan_to_num(K)
            rc = np.nan_to_num(res)
            try:
                step = -np.linalg.solve(Kc, rc[..., None])[..., 0]
                bad = ~np.all(np.isfinite(step), axis=1) | (np.abs(np.linalg.det(Kc)) < 1e-14)
            except np.linalg.LinAlgError:
                step = np.zeros_like(rc)
                bad = np.ones(S, dtype=bool)
            if np.any(bad):
                step[bad] = -np.einsum("sij,sj->si", np.linalg.pinv(Kc[bad]), rc[bad])
        sn = np.linalg.norm(step[:, :m], axis=1, keepdims=True)
        step = np.where(sn > span, step * (span / np.maximum(sn, 1e-300)), step)
        Y = Y + step[:, :m].T
        if not vertex and k:
            lam = lam + step[:, m:].T
        done = (np.linalg.norm(step, axis=1) <= 1e-15 * (1.0 + np.linalg.norm(Y, axis=0))) | ~np.isfinite(res_norm)
        if np.all(done):
            break
    gf, hf, gs, jg, hg = unpack(Y)
    if vertex:
        res = np.stack([gs[j] for j in J]).T
    else:
        JJ = np.stack([jg[j] for j in J]) if k else np.zeros((0, m, S))
        stat = gf + np.einsum("kms,ks->ms", JJ, lam)
        cons = np.stack([gs[j] for j in J]) if k else np.zeros((0, S))
        res = np.concatenate([stat, cons]).T
    return Y.T, np.linalg.norm(np.nan_to_num(res, nan=np.inf), axis=1)


def stationary_candidates(prob: BilevelProblem, x, tol: Tolerances = DEFAULT_TOL,
                          seeds_per_dim: int | None = None, iters: int = 120) -> list:
    """Feasible points solving the stationarity system of some active set.

    For every J with |J| < m this solves grad f + sum_J lam_j grad g_j = 0,
    g_J = 0 (lam of any sign); for |J| = m it solves g_J = 0.  Together they
    contain every KKT point and every Fritz John point with linearly
    dependent active gradients that is isolated on a vertex.
    """
    x = np.asarray(x, float).reshape(prob.n)
    m, p = prob.m, prob.p
    spd = seeds_per_dim or {1: 41, 2: 15, 3: 7}.get(m, 5)
    axes = [_axis(lo, hi, spd) for lo, hi in prob.y_box]
    seeds = np.array(list(itertools.product(*axes)), dtype=float)
    Ys, Rs = [], []
    for size in range(0, min(p, m) + 1):
        for J in itertools.combinations(range(p), size):
            Y, r = _batched_newton(prob, x, seeds, J, iters)
            Ys.append(Y)
            Rs.append(r)
    Y = np.concatenate(Ys)
    r = np.concatenate(Rs)
    keep = np.all(np.isfinite(Y), axis=1) & np.isfinite(r) & (r <= 1e-10)
    keep &= np.all((Y >= prob.y_box[:, 0] - 1e-9) & (Y <= prob.y_box[:, 1] + 1e-9), axis=1)
    Y, r = Y[keep], r[keep]
    if Y.shape[0] == 0:
        return []
    Y = np.clip(Y, prob.y_box[:, 0], prob.y_box[:, 1])
    Y[np.abs(Y) < 1e-14] = 0.0
    if p:
        vals = prob.fg_vectorized(*x, *Y.T)
        ok = np.max(np.asarray(vals[1:]).reshape(p, -1), axis=0) <= tol.feas
        Y, r = Y[ok], r[ok]
    if Y.shape[0] == 0:
        return []
    # cheap exact dedupe before the greedy clustering
    _, first = np.unique(np.round(Y, 10), axis=0, return_index=True)
    Y, r = Y[first], r[first]
    reps = _cluster(list(Y), r, 1e-7)
    out = [Y[i].copy() for i in reps]
    out.sort(key=lambda v: tuple(v))
    return out


def in_graph_S(prob: BilevelProblem, x, y, tol: Tolerances = DEFAULT_TOL, oracle=None) -> bool:
    """Indicator of gph S.

    Requires feasibility, f(x, y) - V(x) <= tol.gph and distance at most
    tol.gph to a computed global minimizer.  The value gap alone is too
    loose: under quadratic growth a gap of 1e-6 still admits points about
    1e-3 away from S(x).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(y < prob.y_box[:, 0] - 1e-12) or np.any(y > prob.y_box[:, 1] + 1e-12):
        return False
    if prob.p and float(np.max(prob.eval_g(x, y))) > tol.feas:
        return False
    sol = (oracle or get_oracle(prob)).solution(x)
    if prob.eval_f(x, y) - sol.value > tol.gph:
        return False
    return any(float(np.linalg.norm(y - w)) <= tol.gph for w in sol.minimizers)
