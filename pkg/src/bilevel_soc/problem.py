"""Bilevel problem data, lower-level Lagrangians and the combined-program shape."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .expr import Expr, compile_exprs, gradient, hessian, parse

__all__ = [
    "ProblemError", "BilevelProblem", "LocalData", "GenericCombinedProgram",
    "load_problem", "problem_from_dict", "bundled_problem", "BUNDLED",
    "lagrangian", "generalized_lagrangian", "hessian_yy_lagrangian",
]

BUNDLED = {"3.1": "example_3_1.json", "4.6": "example_4_6.json", "4.8": "example_4_8.json"}


class ProblemError(ValueError):
    """Raised for malformed problem files."""


@dataclass(frozen=True)
class LocalData:
    """First and second order lower-level data at a single point (x, y)."""

    x: np.ndarray
    y: np.ndarray
    f: float
    g: np.ndarray          # (p,)
    grad_f: np.ndarray     # (m,)   gradient of f in y
    jac_g: np.ndarray      # (p, m) rows are gradients of g_i in y
    hess_f: np.ndarray     # (m, m)
    hess_g: np.ndarray     # (p, m, m)

    def hess_lagrangian(self, u0: float, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        out = u0 * self.hess_f
        if u.size:
            out = out + np.tensordot(u, self.hess_g, axes=1)
        return 0.5 * (out + out.T)

    def grad_lagrangian(self, u0: float, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        return u0 * self.grad_f + (self.jac_g.T @ u if u.size else 0.0)

    def active(self, tol: float) -> np.ndarray:
        return np.flatnonzero(self.g >= -tol)


@dataclass(frozen=True, eq=False)
class BilevelProblem:
    """min F(x, y) s.t. G(x, y) <= 0, y in argmin {f(x, .) : g(x, .) <= 0}.

    Boxes are finite search regions; the lower-level solver never looks
    outside ``y_box``.
    """

    n: int
    m: int
    p: int
    q: int
    F: Expr
    f: Expr
    g: tuple
    G: tuple
    x_box: np.ndarray
    y_box: np.ndarray
    name: str = ""
    candidates: tuple = ()
    source: Mapping = field(default_factory=dict)

    # names -----------------------------------------------------------------
    @cached_property
    def x_names(self) -> tuple:
        return tuple(f"x{i + 1}" for i in range(self.n))

    @cached_property
    def y_names(self) -> tuple:
        return tuple(f"y{i + 1}" for i in range(self.m))

    @cached_property
    def var_names(self) -> tuple:
        return self.x_names + self.y_names

    # symbolic derivatives --------------------------------------------------
    @cached_property
    def grad_y_f(self) -> list:
        return gradient(self.f, self.y_names)

    @cached_property
    def hess_yy_f(self) -> list:
        return hessian(self.f, self.y_names)

    @cached_property
    def grad_y_g(self) -> list:
        return [gradient(gi, self.y_names) for gi in self.g]

    @cached_property
    def hess_yy_g(self) -> list:
        return [hessian(gi, self.y_names) for gi in self.g]

    # compiled kernels --------------------------------------------------------
    @cached_property
    def _local_kernel(self):
        m, p = self.m, self.p
        exprs = [self.f, *self.g, *self.grad_y_f]
        for row in self.grad_y_g:
            exprs.extend(row)
        exprs.extend(e for row in self.hess_yy_f for e in row)
        for H in self.hess_yy_g:
            exprs.extend(e for row in H for e in row)
        return compile_exprs(exprs, self.var_names)

    @cached_property
    def fg_vectorized(self):
        """``fn(*x, *Y) -> (1 + p, ...)`` evaluating f and g on arrays."""
        return compile_exprs([self.f, *self.g], self.var_names)

    @cached_property
    def newton_kernel(self):
        """Vectorised gradient and Hessian in y of f and all g_i."""
        exprs = list(self.grad_y_f) + [e for row in self.hess_yy_f for e in row]
        for gi, row, H in zip(self.g, self.grad_y_g, self.hess_yy_g):
            exprs.append(gi)
            exprs.extend(row)
            exprs.extend(e for r in H for e in r)
        return compile_exprs(exprs, self.var_names)

    @cached_property
    def upper_kernel(self):
        return compile_exprs([self.F, *self.G], self.var_names)

    def local(self, x, y) -> LocalData:
        """Evaluate f, g and their first two y-derivatives at (x, y)."""
        x = np.asarray(x, dtype=float).reshape(self.n)
        y = np.asarray(y, dtype=float).reshape(self.m)
        vals = self._local_kernel(*x, *y)
        m, p = self.m, self.p
        k = 0
        f = float(vals[k]); k += 1
        g = vals[k:k + p].copy(); k += p
        grad_f = vals[k:k + m].copy(); k += m
        jac_g = vals[k:k + p * m].reshape(p, m).copy(); k += p * m
        hess_f = vals[k:k + m * m].reshape(m, m).copy(); k += m * m
        hess_g = vals[k:k + p * m * m].reshape(p, m, m).copy()
        return LocalData(x, y, f, g, grad_f, jac_g, hess_f, hess_g)

    def eval_f(self, x, y) -> float:
        return float(self.fg_vectorized(*np.asarray(x, float), *np.asarray(y, float))[0])

    def eval_g(self, x, y) -> np.ndarray:
        return np.asarray(self.fg_vectorized(*np.asarray(x, float), *np.asarray(y, float))[1:], float)

    def eval_F(self, x, y) -> float:
        return float(self.upper_kernel(*np.asarray(x, float), *np.asarray(y, float))[0])

    def eval_G(self, x, y) -> np.ndarray:
        return np.asarray(self.upper_kernel(*np.asarray(x, float), *np.asarray(y, float))[1:], float)

    def env(self, x, y) -> dict:
        return dict(zip(self.var_names, [*np.asarray(x, float), *np.asarray(y, float)]))

    def in_x_box(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, float)
        return bool(np.all(x >= self.x_box[:, 0] - tol) and np.all(x <= self.x_box[:, 1] + tol))

    def describe(self) -> dict:
        return {
            "name": self.name, "n": self.n, "m": self.m, "p": self.p, "q": self.q,
            "F": str(self.F), "f": str(self.f), "g": [str(e) for e in self.g],
            "G": [str(e) for e in self.G], "x_box": self.x_box.tolist(), "y_box": self.y_box.tolist(),
        }


def _box(value, dim: int, label: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ProblemError(f"{label} must be an array of [lo, hi] pairs") from None
    if arr.shape != (dim, 2):
        raise ProblemError(f"{label} must have shape ({dim}, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ProblemError(f"{label} must have finite bounds")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ProblemError(f"{label} has an empty interval")
    return arr


def problem_from_dict(data: Mapping, name: str = "") -> BilevelProblem:
    """Validate a problem mapping and build a :class:`BilevelProblem`."""
    required = ("n", "m", "p", "q", "F", "f", "g", "G", "x_box", "y_box")
    missing = [k for k in required if k not in data]
    if missing:
        raise ProblemError(f"missing keys: {missing}")
    dims = {}
    for key in ("n", "m", "p", "q"):
        v = data[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ProblemError(f"{key} must be a non-negative integer")
        dims[key] = v
    if dims["n"] < 1 or dims["m"] < 1:
        raise ProblemError("n and m must be positive")
    for key, dim in (("g", dims["p"]), ("G", dims["q"])):
        if not isinstance(data[key], list) or not all(isinstance(s, str) for s in data[key]):
            raise ProblemError(f"{key} must be a list of expression strings")
        if len(data[key]) != dim:
            raise ProblemError(f"{key} has length {len(data[key])}, expected {'p' if key == 'g' else 'q'}={dim}")
    for key in ("F", "f"):
        if not isinstance(data[key], str):
            raise ProblemError(f"{key} must be an expression string")
    names = [f"x{i + 1}" for i in range(dims["n"])] + [f"y{i + 1}" for i in range(dims["m"])]
    try:
        F = parse(data["F"], names)
        f = parse(data["f"], names)
        g = tuple(parse(s, names) for s in data["g"])
        G = tuple(parse(s, names) for s in data["G"])
    except ValueError as exc:
        raise ProblemError(f"expression error: {exc}") from exc
    x_box = _box(data["x_box"], dims["n"], "x_box")
    y_box = _box(data["y_box"], dims["m"], "y_box")
    cands = data.get("candidates", [])
    if not isinstance(cands, list):
        raise ProblemError("candidates must be a list")
    return BilevelProblem(
        n=dims["n"], m=dims["m"], p=dims["p"], q=dims["q"], F=F, f=f, g=g, G=G,
        x_box=x_box, y_box=y_box, name=data.get("name", name),
        candidates=tuple(cands), source=dict(data),
    )


def load_problem(path) -> BilevelProblem:
    """Read a JSON problem file (or a bundled example id such as ``"4.6"``)."""
    if str(path) in BUNDLED:
        return bundled_problem(str(path))
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ProblemError("problem file must contain a JSON object")
    return problem_from_dict(data, name=path.stem)


_BUNDLED_CACHE: dict = {}


def bundled_problem(example_id: str) -> BilevelProblem:
    """One of the shipped examples: ``"3.1"``, ``"4.6"`` or ``"4.8"``."""
    if example_id not in BUNDLED:
        raise KeyError(f"unknown example {example_id!r}; choose from {sorted(BUNDLED)}")
    if example_id not in _BUNDLED_CACHE:
        text = resources.files("bilevel_soc.data").joinpath(BUNDLED[example_id]).read_text()
        _BUNDLED_CACHE[example_id] = problem_from_dict(json.loads(text), name=f"example_{example_id}")
    return _BUNDLED_CACHE[example_id]


def lagrangian(prob: BilevelProblem, x, y, u) -> float:
    return generalized_lagrangian(prob, x, y, 1.0, u)


def generalized_lagrangian(prob: BilevelProblem, x, y, u0: float, u) -> float:
    """u0 * f + sum_i u_i g_i at (x, y); signs of u are not checked."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != prob.p:
        raise ValueError(f"expected {prob.p} multipliers, got {u.size}")
    vals = prob.fg_vectorized(*np.asarray(x, float), *np.asarray(y, float))
    total = u0 * float(vals[0])
    for ui, gi in zip(u, vals[1:]):
        total += ui * float(gi)
    return total


def hessian_yy_lagrangian(prob: BilevelProblem, x, y, u0: float, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != prob.p:
        raise ValueError(f"expected {prob.p} multipliers, got {u.size}")
    return prob.local(x, y).hess_lagrangian(u0, u)


@dataclass(frozen=True, eq=False)
class GenericCombinedProgram:
    """min F s.t. [f - V <= 0], (-g, u) complementary, H(x, y, u, w) in C.

    ``C`` is a product of ``{0}`` factors (``"zero"``) and nonpositive
    half-lines (``"nonpos"``).  Matrix-cone requirements that do not fit this
    shape are carried as a named ``side_condition`` evaluated by :mod:`soc`.
    """

    kind: str
    problem: BilevelProblem
    blocks: tuple               # ((block_name, (var names...)), ...)
    objective: Expr
    has_value_gap: bool
    comp_pairs: tuple           # ((g index, u variable name), ...)
    H: tuple
    H_cone: tuple
    H_labels: tuple
    side_condition: str | None = None
    penalty: float | None = None
    meta: Mapping = field(default_factory=dict)

    @cached_property
    def var_names(self) -> tuple:
        return tuple(v for _, names in self.blocks for v in names)

    @cached_property
    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.var_names)}

    @property
    def dim(self) -> int:
        return len(self.var_names)

    def block(self, z, name: str) -> np.ndarray:
        z = np.asarray(z, float)
        for bname, names in self.blocks:
            if bname == name:
                return np.array([z[self.index[v]] for v in names])
        return np.zeros(0)

    def has_block(self, name: str) -> bool:
        return any(b == name and len(v) for b, v in self.blocks)

    def xy(self, z):
        return self.block(z, "x"), self.block(z, "y")

    def u_values(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        return np.array([z[self.index[name]] for _, name in self.comp_pairs])

    # compiled maps -------------------------------------------------------
    @cached_property
    def _h_kernel(self):
        return compile_exprs(self.H, self.var_names)

    @cached_property
    def _h_jac_kernel(self):
        return compile_exprs([e.diff(v) for e in self.H for v in self.var_names], self.var_names)

    @cached_property
    def _upper_kernel(self):
        prob = self.problem
        exprs = [self.objective, prob.f]
        exprs += [self.objective.diff(v) for v in self.var_names]
        exprs += [prob.f.diff(v) for v in self.var_names]
        for gi in prob.g:
            exprs.append(gi)
            exprs += [gi.diff(v) for v in self.var_names]
        return compile_exprs(exprs, self.var_names)

    def H_values(self, z) -> np.ndarray:
        if not self.H:
            return np.zeros(0)
        return np.asarray(self._h_kernel(*np.asarray(z, float)), float)

    def H_jacobian(self, z) -> np.ndarray:
        if not self.H:
            return np.zeros((0, self.dim))
        return np.asarray(self._h_jac_kernel(*np.asarray(z, float)), float).reshape(len(self.H), self.dim)

    def upper(self, z) -> dict:
        """F, f, g and their gradients in the full variable space."""
        N, p = self.dim, self.problem.p
        vals = np.asarray(self._upper_kernel(*np.asarray(z, float)), float)
        F, f = vals[0], vals[1]
        grad_F = vals[2:2 + N]
        grad_f = vals[2 + N:2 + 2 * N]
        rest = vals[2 + 2 * N:].reshape(p, N + 1) if p else np.zeros((0, N + 1))
        return {"F": float(F), "f": float(f), "grad_F": grad_F, "grad_f": grad_f,
                "g": rest[:, 0].copy(), "jac_g": rest[:, 1:].copy()}

    @cached_property
    def zero_rows(self) -> np.ndarray:
        return np.array([c == "zero" for c in self.H_cone], dtype=bool)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "variables": list(self.var_names),
            "has_value_gap": self.has_value_gap,
            "penalty": self.penalty,
            "complementarity": [[f"g{i + 1}", u] for i, u in self.comp_pairs],
            "H": [{"label": l, "expr": str(e), "cone": c} for l, e, c in zip(self.H_labels, self.H, self.H_cone)],
            "side_condition": self.side_condition,
        }
