"""Falsification tests for partial and Clarke calmness of combined programs.

The tests are one-sided.  A ``VIOLATED`` verdict carries, for every tested
penalty and neighbourhood radius, a feasible point whose penalized objective
is strictly below the candidate's; such witnesses can be replayed with
:func:`replay_witness`.  Failing to find witnesses yields ``NOT_REFUTED``,
which says nothing about calmness actually holding.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import DEFAULT_TOL, DEFAULTS, Tolerances
from .lower import get_oracle, stationary_candidates
from .problem import BilevelProblem, GenericCombinedProgram
from .problem import bundled_problem
from . import reform

__all__ = [
    "CalmStatus", "Witness", "CalmnessVerdict", "test_partial_calmness", "test_clarke_calmness",
    "analytic_witness_check", "replay_witness", "check_implication_diagram", "table1", "ARROWS",
]

# strict feasibility used while searching; replay uses the looser report tolerance
_SEARCH_FEAS = 1e-13


class CalmStatus(str, Enum):
    VIOLATED = "VIOLATED"
    NOT_REFUTED = "NOT_REFUTED"


@dataclass
class Witness:
    mu: float
    radius: float
    point: np.ndarray
    objective: float
    base: float
    drop: float
    perturbation: dict | None = None

    def to_dict(self) -> dict:
        out = {"mu": self.mu, "radius": self.radius, "point": self.point.tolist(),
               "objective": self.objective, "base": self.base, "drop": self.drop}
        if self.perturbation is not None:
            out["perturbation"] = self.perturbation
        return out


@dataclass
class CalmnessVerdict:
    kind: str                     # PARTIAL or CLARKE
    program: str
    status: CalmStatus
    mu_tested: list
    witnesses: list = field(default_factory=list)
    search_meta: dict = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return self.status is CalmStatus.VIOLATED

    def to_dict(self) -> dict:
        return {"kind": self.kind, "program": self.program, "status": self.status.value,
                "mu_tested": list(self.mu_tested), "witnesses": [w.to_dict() for w in self.witnesses],
                "search_meta": self.search_meta}


# local search machinery ------------------------------------------------------------

class _Chart:
    """Feasible-point generator for a program near a centre point.

    Explicit programs move in the full variable space and are pulled back
    onto the equality rows of a complementarity branch by Gauss-Newton.
    Membership programs move in x only; y is chosen among stationary
    candidates that belong to the membership set.
    """

    def __init__(self, gcp: GenericCombinedProgram, center: np.ndarray, radius: float, branch, tol: Tolerances):
        self.gcp = gcp
        self.prob = gcp.problem
        self.center = center
        self.radius = radius
        self.branch = branch
        self.tol = tol
        # membership and side conditions must hold robustly at a witness, so
        # curvature and feasibility slack are not granted during the search
        self.strict = tol.updated(soc=1e-13, feas=_SEARCH_FEAS)
        self.membership = bool(gcp.meta.get("membership"))
        self.ix = np.array([gcp.index[v] for v in self.prob.x_names])
        self.iy = np.array([gcp.index[v] for v in self.prob.y_names])
        self.zero = gcp.zero_rows
        self.u_idx = np.array([gcp.index[name] for _, name in gcp.comp_pairs], dtype=int)

    # coordinates ---------------------------------------------------------------
    def start(self) -> np.ndarray:
        return self.center[self.ix].copy() if self.membership else self.center.copy()

    def directions(self) -> list:
        dim = len(self.ix) if self.membership else self.gcp.dim
        dirs = []
        if len(self.ix) > 1:
            v = np.zeros(dim)
            v[np.arange(len(self.ix)) if self.membership else self.ix] = 1.0 / math.sqrt(len(self.ix))
            dirs += [v, -v]
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = 1.0
            dirs += [e, -e]
        return dirs

    def _clip(self, z: np.ndarray) -> np.ndarray:
        z = z.copy()
        if self.membership:
            return np.clip(z, self.prob.x_box[:, 0], self.prob.x_box[:, 1])
        z[self.ix] = np.clip(z[self.ix], self.prob.x_box[:, 0], self.prob.x_box[:, 1])
        z[self.iy] = np.clip(z[self.iy], self.prob.y_box[:, 0], self.prob.y_box[:, 1])
        return z

    # explicit programs ---------------------------------------------------------
    def _equalities(self, z):
        gcp = self.gcp
        rows, jac = [], []
        if gcp.H:
            Hv = gcp.H_values(z)
            HJ = gcp.H_jacobian(z)
            rows.append(Hv[self.zero])
            jac.append(HJ[self.zero])
        if gcp.comp_pairs:
            up = gcp.upper(z)
            for (i, uname), b in zip(gcp.comp_pairs, self.branch):
                if b == "g":
                    rows.append(np.array([up["g"][i]]))
                    jac.append(up["jac_g"][i][None, :])
                else:
                    e = np.zeros((1, gcp.dim))
                    e[0, gcp.index[uname]] = 1.0
                    rows.append(np.array([z[gcp.index[uname]]]))
                    jac.append(e)
        if not rows:
            return np.zeros(0), np.zeros((0, gcp.dim))
        return np.concatenate(rows), np.vstack(jac)

    def _restore(self, z):
        for _ in range(60):
            c, J = self._equalities(z)
            if c.size == 0 or float(np.max(np.abs(c))) <= 1e-14:
                return z
            if not np.all(np.isfinite(c)):
                return None
            step = np.linalg.lstsq(J, -c, rcond=None)[0]
            z = z + step
            if np.linalg.norm(z - self.center) >= self.radius * 1.5:
                return None
        c, _ = self._equalities(z)
        return z if float(np.max(np.abs(c), initial=0.0)) <= _SEARCH_FEAS else None

    def _inequalities_ok(self, z) -> bool:
        gcp = self.gcp
        if gcp.H:
            Hv = gcp.H_values(z)
            if np.any(Hv[~self.zero] > _SEARCH_FEAS):
                return False
        if gcp.comp_pairs:
            g = self.prob.eval_g(*gcp.xy(z))
            if np.any(g > _SEARCH_FEAS) or np.any(z[self.u_idx] < -_SEARCH_FEAS):
                return False
        prob = self.prob
        x, y = z[self.ix], z[self.iy]
        if np.any(x < prob.x_box[:, 0] - 1e-14) or np.any(x > prob.x_box[:, 1] + 1e-14):
            return False
        if np.any(y < prob.y_box[:, 0] - 1e-14) or np.any(y > prob.y_box[:, 1] + 1e-14):
            return False
        return True

    def realize(self, coords):
        """Feasible program point for the given search coordinates, or None."""
        coords = self._clip(np.asarray(coords, float))
        if self.membership:
            return self._realize_membership(coords)
        z = self._restore(coords)
        if z is None or np.linalg.norm(z - self.center) >= self.radius:
            return None
        if not self._inequalities_ok(z):
            return None
        if not reform.side_condition_holds(self.gcp, z, self.strict):
            return None
        return z

    # membership programs -------------------------------------------------------
    def _realize_membership(self, x):
        prob, gcp = self.prob, self.gcp
        kind = gcp.side_condition.split(":", 1)[1]
        oracle = get_oracle(prob)
        ys = list(stationary_candidates(prob, x, self.tol)) + list(oracle.solution(x).minimizers)
        best = None
        for y in ys:
            z = np.concatenate([x, y])
            if np.linalg.norm(z - self.center) >= self.radius:
                continue
            if prob.q and np.any(prob.eval_G(x, y) > _SEARCH_FEAS):
                continue
            if not reform.sigma_membership(prob, kind, x, y, self.strict):
                continue
            val = reform.objective_value(gcp, z, oracle)
            if best is None or val < best[1]:
                best = (z, val)
        return best


def _branches(gcp: GenericCombinedProgram, z: np.ndarray, tol: Tolerances, cap: int = 16) -> list:
    """Complementarity branches at z: 'g' keeps g_i = 0, 'u' keeps u_i = 0."""
    if not gcp.comp_pairs:
        return [()]
    g = gcp.problem.eval_g(*gcp.xy(z))
    u = gcp.u_values(z)
    options = []
    for (i, _), ui in zip(gcp.comp_pairs, u):
        active = g[i] >= -tol.active
        if active and ui > tol.pos:
            options.append(("g",))
        elif active:
            options.append(("g", "u"))
        else:
            options.append(("u",))
    combos = list(itertools.product(*options))
    if len(combos) > cap:
        combos = [tuple(o[-1] for o in options)] + combos[:cap - 1]
    return combos


def _pattern_search(chart: _Chart, objective, base: float, tol_drop: float, budget: int, rng,
                    n_starts: int):
    """Compass search with step halving from the centre and random restarts in the ball.

    ``objective(z)`` returns the value to decrease.  Returns (best point,
    best value, evaluations); stops early at a strict drop below
    ``base - tol_drop``.
    """
    evals = 0
    best_z, best_f = None, math.inf
    dirs = chart.directions()
    starts = [chart.start()]
    dim = len(starts[0])
    for _ in range(n_starts):
        v = rng.standard_normal(dim)
        v *= chart.radius * 0.9 * rng.random() ** (1.0 / dim) / max(np.linalg.norm(v), 1e-300)
        starts.append(starts[0] + v)
    for k, s in enumerate(starts):
        if evals >= budget:
            break
        res = chart.realize(s)
        if res is None:
            continue
        z, fz = (res if chart.membership else (res, objective(res)))
        if chart.membership:
            fz = objective(z)
        coords = z[chart.ix] if chart.membership else z
        evals += 1
        if fz < best_f:
            best_z, best_f = z, fz
        if fz < base - tol_drop:
            return best_z, best_f, evals
        step = 0.5 * chart.radius if k == 0 else 0.25 * chart.radius
        while evals < budget and step > 1e-9 * chart.radius:
            improved = False
            for dvec in dirs:
                res = chart.realize(coords + step * dvec)
                if res is None:
                    continue
                zt = res[0] if chart.membership else res
                ft = objective(zt)
                evals += 1
                if ft < fz - 1e-15 * (1.0 + abs(fz)):
                    z, fz = zt, ft
                    coords = z[chart.ix] if chart.membership else z
                    improved = True
                    if fz < best_f:
                        best_z, best_f = z, fz
                    if fz < base - tol_drop:
                        return best_z, best_f, evals
                    break
                if evals >= budget:
                    break
            if not improved:
                step *= 0.5
    return best_z, best_f, evals


def _check_candidate(gcp, candidate, oracle):
    ok, res = reform.feasible(gcp, candidate, tol=1e-8, oracle=oracle)
    if not ok:
        raise ValueError(f"candidate is infeasible for {gcp.kind}: {res}")


def test_partial_calmness(gcp: GenericCombinedProgram, candidate, mu_list=None, radii=None,
                          budget: int | None = None, tol: Tolerances = DEFAULT_TOL, seed: int | None = None,
                          n_starts: int = 8, stop_early: bool = True) -> CalmnessVerdict:
    """Search for penalized-objective decreases near a feasible candidate.

    VIOLATED requires a witness for every (mu, radius) pair.  The search
    stops at the first pair without a witness unless ``stop_early`` is False.
    """
    mu_list = sorted(float(m) for m in (DEFAULTS.mu_list if mu_list is None else mu_list))
    radii = list(DEFAULTS.radii if radii is None else radii)
    budget = DEFAULTS.budget if budget is None else budget
    seed = DEFAULTS.seed if seed is None else seed
    candidate = np.asarray(candidate, float).reshape(gcp.dim)
    oracle = get_oracle(gcp.problem)
    _check_candidate(gcp, candidate, oracle)
    branches = _branches(gcp, candidate, tol)
    witnesses, failures, total = [], [], 0
    for mu in mu_list:
        pen = reform.penalize(gcp, mu)
        base = reform.objective_value(pen, candidate, oracle)

        def objective(z, pen=pen):
            return reform.objective_value(pen, z, oracle)

        for r in radii:
            rng = np.random.default_rng([seed, int(mu * 1000), int(round(-math.log10(r) * 100))])
            found = None
            per_branch = max(1, budget // len(branches))
            for br in branches:
                chart = _Chart(pen, candidate, r, br, tol)
                z, fz, ev = _pattern_search(chart, objective, base, tol.drop, per_branch, rng, n_starts)
                total += ev
                if z is not None and fz < base - tol.drop:
                    found = Witness(mu, r, z, fz, base, base - fz)
                    break
            if found is None:
                failures.append({"mu": mu, "radius": r})
                if stop_early:
                    break
            else:
                witnesses.append(found)
        if failures and stop_early:
            break
    status = CalmStatus.VIOLATED if not failures else CalmStatus.NOT_REFUTED
    meta = {"radii": radii, "budget": budget, "evaluations": total, "branches": [list(b) for b in branches],
            "seed": seed, "tol_drop": tol.drop, "unrefuted_pairs": failures}
    if max(mu_list) < 100:
        meta["note"] = "largest tested penalty is below 100"
    return CalmnessVerdict("PARTIAL", gcp.kind, status, mu_list, witnesses, meta)


def test_clarke_calmness(gcp: GenericCombinedProgram, candidate, eps_list=None, mu_max: float = 100.0,
                         budget: int | None = None, tol: Tolerances = DEFAULT_TOL, seed: int | None = None,
                         n_starts: int = 8) -> CalmnessVerdict:
    """Search for F(w) - F(candidate) + mu_max |r(w)| < -tol_drop with |r|, |w - candidate| < eps.

    r(w) is the smallest perturbation (value gap, complementarity, H rows,
    Euclidean norm) placing w in the perturbed feasible set.  Two phases are
    run per radius: points restored onto every constraint except the value
    gap, then an unrestricted compass search on the perturbed objective.
    """
    eps_list = list(DEFAULTS.radii if eps_list is None else eps_list)
    budget = DEFAULTS.budget if budget is None else budget
    seed = DEFAULTS.seed if seed is None else seed
    candidate = np.asarray(candidate, float).reshape(gcp.dim)
    oracle = get_oracle(gcp.problem)
    _check_candidate(gcp, candidate, oracle)
    F0 = gcp.problem.eval_F(*gcp.xy(candidate))
    branches = _branches(gcp, candidate, tol)
    witnesses, failures, total = [], [], 0
    for eps in eps_list:
        def objective(z, eps=eps):
            r = reform.perturbation(gcp, z, oracle)["norm"]
            if r >= eps:
                return math.inf
            return gcp.problem.eval_F(*gcp.xy(z)) - F0 + mu_max * r

        rng = np.random.default_rng([seed, int(round(-math.log10(eps) * 100))])
        found = None
        relaxed = dataclasses_replace(gcp, has_value_gap=False)
        for br in branches:
            chart = _Chart(relaxed, candidate, eps, br, tol)
            z, fz, ev = _pattern_search(chart, objective, 0.0, tol.drop, max(1, budget // (2 * len(branches))),
                                        rng, n_starts)
            total += ev
            if z is not None and fz < -tol.drop:
                found = z
                break
        if found is None and not gcp.meta.get("membership"):
            chart = _FreeChart(gcp, candidate, eps, tol)
            z, fz, ev = _pattern_search(chart, objective, 0.0, tol.drop, budget // 2, rng, n_starts)
            total += ev
            if z is not None and fz < -tol.drop:
                found = z
        if found is None:
            failures.append({"eps": eps})
            break
        pert = reform.perturbation(gcp, found, oracle)
        val = objective(found)
        witnesses.append(Witness(mu_max, eps, found, val, 0.0, -val, pert))
    status = CalmStatus.VIOLATED if not failures else CalmStatus.NOT_REFUTED
    meta = {"eps": eps_list, "mu_max": mu_max, "budget": budget, "evaluations": total,
            "norm": "euclidean", "seed": seed, "unrefuted": failures}
    return CalmnessVerdict("CLARKE", gcp.kind, status, [mu_max], witnesses, meta)


def dataclasses_replace(gcp, **kw):
    import dataclasses
    return dataclasses.replace(gcp, **kw)


class _FreeChart(_Chart):
    """Unconstrained chart: any point in the ball (boxes and side condition kept)."""

    def __init__(self, gcp, center, radius, tol):
        super().__init__(gcp, center, radius, (), tol)

    def realize(self, coords):
        z = self._clip(np.asarray(coords, float))
        if np.linalg.norm(z - self.center) >= self.radius:
            return None
        if not reform.side_condition_holds(self.gcp, z, self.strict):
            return None
        return z


# replay and analytic checks --------------------------------------------------------

def replay_witness(gcp: GenericCombinedProgram, candidate, witness: Witness, kind: str = "PARTIAL",
                   tol: Tolerances = DEFAULT_TOL, feas_tol: float = 1e-8) -> dict:
    """Re-verify a stored witness from scratch: feasibility, ball and strict drop."""
    candidate = np.asarray(candidate, float)
    w = np.asarray(witness.point, float)
    oracle = get_oracle(gcp.problem)
    in_ball = bool(np.linalg.norm(w - candidate) < witness.radius)
    if kind == "PARTIAL":
        pen = reform.penalize(gcp, witness.mu)
        ok, res = reform.feasible(pen, w, tol=feas_tol, oracle=oracle)
        drop = reform.objective_value(pen, candidate, oracle) - reform.objective_value(pen, w, oracle)
    else:
        pert = reform.perturbation(gcp, w, oracle)
        relaxed = dataclasses_replace(gcp, has_value_gap=False)
        side_ok = reform.side_condition_holds(gcp, w, tol)
        F0 = gcp.problem.eval_F(*gcp.xy(candidate))
        drop = -(gcp.problem.eval_F(*gcp.xy(w)) - F0 + witness.mu * pert["norm"])
        ok = side_ok and pert["norm"] < witness.radius
        res = {"perturbation_norm": pert["norm"], "side_condition": side_ok,
               "box": reform.residuals(relaxed, w, tol, oracle, with_side=False)["box"]}
        ok = ok and res["box"] <= feas_tol
    return {"feasible": bool(ok), "in_ball": in_ball, "drop": float(drop),
            "ok": bool(ok and in_ball and drop >= tol.drop), "residuals": res}


def analytic_witness_check(example_id: str, mu: float, k: int | None = None) -> dict:
    """Evaluate the known violating sequence of the penalized CP program.

    The bundled problem "3.1" uses (x, y) = (1/k, 0) with closed form
    k^-2 - k^-1 + (mu/4) k^-2 + 1/4 against the value 1/4 at the origin;
    problem "4.6" uses (1/k, 1/k, 0) with closed form -2/k + mu/k^2 against 0.
    By default k is one past the threshold (1 + mu/4, resp. mu/2).
    """
    mu = float(mu)
    if example_id == "3.1":
        kk = k if k is not None else math.ceil(1 + mu / 4) + 1
        closed = kk ** -2 - kk ** -1 + (mu / 4) * kk ** -2 + 0.25
        prob = bundled_problem("3.1")
        point = [1.0 / kk, 0.0]
        origin = [0.0, 0.0]
    elif example_id == "4.6":
        kk = k if k is not None else math.ceil(mu / 2) + 1
        closed = -2.0 / kk + mu / kk ** 2
        prob = bundled_problem("4.6")
        point = [1.0 / kk, 1.0 / kk, 0.0, 0.0, 0.0]
        origin = [0.0] * 5
    else:
        raise ValueError(f"no analytic sequence for example {example_id!r}; use 3.1 or 4.6")
    pen = reform.penalize(reform.build(prob, "CP"), mu)
    value = reform.objective_value(pen, point)
    base = reform.objective_value(pen, origin)
    feasible, _ = reform.feasible(pen, point)
    return {
        "example": example_id, "mu": mu, "k": kk, "point": point, "closed_form": closed,
        "evaluated": value, "baseline": base, "drop": base - value,
        "matches": abs(value - closed) <= 1e-10, "strict": base - value > 0.0,
        "feasible": feasible,
    }


# implication diagram ------------------------------------------------------------------

ARROWS = (
    ("VP", "CPFJ", "smaller feasible set"),
    ("CPFJ", "R_FJSOCP", "relaxed Fritz John second-order program"),
    ("CP", "R_BSOCP", "basic second-order relaxed program"),
    ("WSOCP", "WSOCPZ", "squared-slack equivalence"),
    ("WSOCPZ", "WSOCP", "squared-slack equivalence"),
)


def check_implication_diagram(prob: BilevelProblem, candidates: dict, mu_list=None, radii=None,
                              budget: int | None = None, tol: Tolerances = DEFAULT_TOL,
                              seed: int | None = None) -> dict:
    """Consistency of partial-calmness verdicts along the known implications.

    ``candidates`` maps a program kind to a point (array) or a block dict.
    An arrow is flagged only when its source is NOT_REFUTED and its target
    VIOLATED; flags are warnings, since both verdicts are one-sided.
    """
    verdicts = {}
    for kind, cand in candidates.items():
        gcp = reform.program(prob, kind)
        z = reform.point_from_blocks(gcp, cand) if isinstance(cand, dict) else np.asarray(cand, float)
        verdicts[reform._kind(kind).value] = test_partial_calmness(gcp, z, mu_list, radii, budget, tol, seed)
    arrows = []
    for src, dst, why in ARROWS:
        if src in verdicts and dst in verdicts:
            s, t = verdicts[src].status, verdicts[dst].status
            flagged = s is CalmStatus.NOT_REFUTED and t is CalmStatus.VIOLATED
            arrows.append({"source": src, "target": dst, "reason": why, "source_status": s.value,
                           "target_status": t.value, "consistent": not flagged})
    return {"verdicts": {k: v.to_dict() for k, v in verdicts.items()}, "arrows": arrows,
            "inconsistencies": sum(not a["consistent"] for a in arrows)}


# verdict matrix --------------------------------------------------------------------------------

TABLE1_COLUMNS = ("CP", "SOCP_B", "SOCP_S", "R_BSOCP", "WSOCP")
_SIGMA_OF = {"SOCP_B": "BSOC", "SOCP_S": "SSOC", "R_BSOCP": "BSOC", "WSOCP": "WSOC"}


def _x_grid(prob: BilevelProblem, per_dim: int):
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in prob.x_box]
    return [np.array(p) for p in itertools.product(*axes)]


def _candidate(gcp, prob):
    return reform.default_candidate(gcp)


def table1(grid_scale: int = 1, mu_list=None, radii=None, budget: int = 2000, seed: int | None = None,
           tol: Tolerances = DEFAULT_TOL) -> dict:
    """Partial-calmness verdict matrix for the bundled problems "4.6" and "4.8".

    The CP column is "No" when the penalty search finds witnesses for every
    tested penalty.  Every other column is "Yes" when the membership set
    coincides with gph S on an x-grid (so the value gap is redundant) and the
    search with mu = 0 finds no decrease; it is "No" when the penalty search
    is VIOLATED, and "Undetermined" otherwise.
    """
    per_dim = {1: 21, 2: 11}
    rows, details = {}, {}
    for ex in ("4.6", "4.8"):
        prob = bundled_problem(ex)
        xs = _x_grid(prob, per_dim.get(prob.n, 5) * grid_scale)
        records = reform.membership_grid(prob, xs, kinds=tuple(sorted(set(_SIGMA_OF.values()))), tol=tol)
        row, det = [], {}
        for col in TABLE1_COLUMNS:
            gcp = reform.program(prob, col)
            cand = _candidate(gcp, prob)
            info = {}
            if col == "CP":
                v = test_partial_calmness(gcp, cand, mu_list, radii, budget, tol, seed)
                verdict = "No" if v.violated else "Undetermined"
                info["penalty_search"] = v.status.value
            else:
                sig = _SIGMA_OF[col]
                mismatches = sum(r[sig] != r["gph"] for r in records)
                v0 = test_partial_calmness(gcp, cand, [0.0], radii, budget, tol, seed)
                info.update({"sigma": sig, "grid_points": len(records), "mismatches": mismatches,
                             "mu0_search": v0.status.value})
                if mismatches == 0 and not v0.violated:
                    verdict = "Yes"
                else:
                    v = test_partial_calmness(gcp, cand, mu_list, radii, budget, tol, seed)
                    info["penalty_search"] = v.status.value
                    verdict = "No" if v.violated else "Undetermined"
            info["verdict"] = verdict
            row.append(verdict)
            det[col] = info
        rows[ex] = row
        details[ex] = det
    return {"columns": list(TABLE1_COLUMNS), "rows": rows, "details": details, "grid_scale": grid_scale}
