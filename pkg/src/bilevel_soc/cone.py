"""Polyhedral cones {d : E d = 0, I d <= 0} and quadratic forms over them."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import nnls

__all__ = ["PolyhedralCone", "cone_quadratic_min", "null_basis", "sample_directions"]


def null_basis(A: np.ndarray, dim: int, tol_rank: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of ker A with a relative singular value cut-off."""
    A = np.asarray(A, dtype=float).reshape(-1, dim)
    if A.shape[0] == 0:
        return np.eye(dim)
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    return null_space(A, rcond=tol_rank * scale / max(float(np.linalg.norm(A, 2)), 1e-300))


@dataclass(frozen=True, eq=False)
class PolyhedralCone:
    """Cone ``{d : E d = 0, I d <= 0}`` in R^dim.

    Rows with norm at most ``zero_tol`` are dropped at construction, so a
    vanishing gradient never turns into a spurious constraint.
    """

    E: np.ndarray
    I: np.ndarray
    dim: int
    tol_rank: float = 1e-10
    zero_tol: float = 1e-12

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float).reshape(-1, self.dim)
        I = np.asarray(self.I, dtype=float).reshape(-1, self.dim)
        E = E[np.linalg.norm(E, axis=1) > self.zero_tol] if E.size else E
        I = I[np.linalg.norm(I, axis=1) > self.zero_tol] if I.size else I
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "I", I)

    @classmethod
    def subspace(cls, E, dim: int, **kw) -> "PolyhedralCone":
        return cls(np.asarray(E, float).reshape(-1, dim), np.zeros((0, dim)), dim, **kw)

    @classmethod
    def full(cls, dim: int) -> "PolyhedralCone":
        return cls(np.zeros((0, dim)), np.zeros((0, dim)), dim)

    @property
    def is_subspace(self) -> bool:
        return self.I.shape[0] == 0

    @cached_property
    def eq_null(self) -> np.ndarray:
        """Orthonormal basis of {d : E d = 0}."""
        return null_basis(self.E, self.dim, self.tol_rank)

    def contains(self, d, tol: float = 1e-9) -> bool:
        d = np.asarray(d, dtype=float).reshape(self.dim)
        bound = tol * (1.0 + float(np.linalg.norm(d)))
        eq = float(np.abs(self.E @ d).max(initial=0.0))
        ineq = float((self.I @ d).max(initial=-np.inf))
        return eq <= bound and ineq <= bound

    def project(self, d) -> np.ndarray:
        """Euclidean projection onto the cone.

        Moreau decomposition inside ker E: the projection of v onto the cone
        is v minus its projection onto the polar cone generated by the
        (projected) inequality normals, which is a nonnegative least squares
        problem.
        """
        d = np.asarray(d, dtype=float).reshape(self.dim)
        N = self.eq_null
        if N.shape[1] == 0:
            return np.zeros(self.dim)
        v = N.T @ d
        if self.I.shape[0] == 0:
            return N @ v
        B = (self.I @ N).T          # polar generators in reduced coordinates
        lam, _ = nnls(B, v)
        return N @ (v - B @ lam)

    @cached_property
    def is_trivial(self) -> bool:
        """True when the cone is {0}."""
        N = self.eq_null
        k = N.shape[1]
        if k == 0:
            return True
        if self.I.shape[0] == 0:
            return False
        B = self.I @ N
        # the cone {t : B t <= 0} is {0} iff the rows of B positively span R^k,
        # i.e. every +-e_i is a nonnegative combination of the rows
        for i in range(k):
            for s in (1.0, -1.0):
                target = np.zeros(k)
                target[i] = s
                _, res = nnls(B.T, target)
                if res > 1e-9:
                    return False
        return True

    def rays(self) -> list:
        """Unit vectors on extreme rays and lineality directions (small cones only)."""
        N = self.eq_null
        k = N.shape[1]
        out = []
        if k == 0:
            return out
        if self.I.shape[0] == 0:
            for j in range(k):
                out.extend([N[:, j], -N[:, j]])
            return out
        B = self.I @ N
        rows = B.shape[0]
        if rows > 12:
            return out
        for size in range(max(k - 1, 0), min(rows, k - 1) + 1):
            for S in itertools.combinations(range(rows), size):
                M = B[list(S)] if S else np.zeros((0, k))
                basis = null_basis(M, k, self.tol_rank)
                if basis.shape[1] != 1:
                    continue
                for s in (1.0, -1.0):
                    t = s * basis[:, 0]
                    d = N @ t
                    if self.contains(d, 1e-9):
                        out.append(d / np.linalg.norm(d))
        return _unique_rows(out)

    def to_dict(self) -> dict:
        return {"E": self.E.tolist(), "I": self.I.tolist(), "dim": self.dim}


def _unique_rows(vectors, tol: float = 1e-9) -> list:
    out = []
    for v in vectors:
        if all(np.linalg.norm(v - w) > tol for w in out):
            out.append(v)
    return out


def _sphere_points(k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if k == 3:
        i = np.arange(count) + 0.5
        phi = np.arccos(1 - 2 * i / count)
        theta = np.pi * (1 + 5 ** 0.5) * i
        return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    pts = rng.standard_normal((count, k))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def sample_directions(cone: PolyhedralCone, n_dirs: int = 257, seed: int = 0) -> np.ndarray:
    """Unit directions covering the cone (rows).

    Exact (+-1) in one reduced dimension, an angular grid in two, a Fibonacci
    sphere in three and Gaussian samples beyond; sphere points outside the
    cone are replaced by their normalized projections, and extreme rays are
    always included.
    """
    if cone.is_trivial:
        return np.zeros((0, cone.dim))
    N = cone.eq_null
    k = N.shape[1]
    rng = np.random.default_rng(seed)
    pts = _sphere_points(k, n_dirs, rng) @ N.T
    out = []
    for d in pts:
        if not cone.contains(d, 1e-12):
            d = cone.project(d)
            nd = np.linalg.norm(d)
            if nd < 1e-12:
                continue
            d = d / nd
        out.append(d)
    out.extend(cone.rays())
    if not out:
        return np.zeros((0, cone.dim))
    arr = np.array(out)
    # deduplicate on a coarse key to keep the sample light
    _, idx = np.unique(np.round(arr, 12), axis=0, return_index=True)
    return arr[np.sort(idx)]


def cone_quadratic_min(H, cone: PolyhedralCone, n_starts: int = 64, seed: int = 0):
    """Minimise d^T H d over the cone intersected with the unit sphere.

    Returns ``(value, d, exact)``.  On subspaces this is the smallest
    eigenvalue of the basis-projected matrix.  For general cones with few
    inequality rows every face is enumerated: a minimiser lies in the relative
    interior of some face and is then an eigenvector of the face-restricted
    matrix, so checking all face eigenvectors is exact.  Larger cones fall
    back to multistart projected gradient (``exact`` is False).  A trivial
    cone gives ``(inf, None, True)``.
    """
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    if cone.is_trivial:
        return math.inf, None, True
    N = cone.eq_null
    if cone.is_subspace:
        M = N.T @ H @ N
        w, V = np.linalg.eigh(M)
        d = N @ V[:, 0]
        return float(w[0]), d / np.linalg.norm(d), True

    B = cone.I @ N
    rows = B.shape[0]
    k = N.shape[1]
    Hr = N.T @ H @ N
    best_val, best_t = math.inf, None
    if rows <= 12:
        for size in range(0, min(rows, k - 1) + 1):
            for S in itertools.combinations(range(rows), size):
                basis = null_basis(B[list(S)], k) if S else np.eye(k)
                if basis.shape[1] == 0:
                    continue
                w, V = np.linalg.eigh(basis.T @ Hr @ basis)
                for j in range(V.shape[1]):
                    for s in (1.0, -1.0):
                        t = s * (basis @ V[:, j])
                        if np.max(B @ t) <= 1e-10 * (1 + np.linalg.norm(t)):
                            val = float(t @ Hr @ t)
                            if val < best_val:
                                best_val, best_t = val, t
        if best_t is not None:
            d = N @ best_t
            return best_val, d / np.linalg.norm(d), True

    rng = np.random.default_rng(seed)
    reduced = PolyhedralCone(np.zeros((0, k)), B, k)
    starts = list(sample_directions(reduced, max(n_starts, 8), seed))
    starts += list(rng.standard_normal((n_starts, k)))
    step = 0.5 / max(1.0, float(np.linalg.norm(Hr, 2)))
    for t in starts:
        t = reduced.project(t)
        nt = np.linalg.norm(t)
        if nt < 1e-12:
            continue
        t = t / nt
        for _ in range(200):
            t_new = reduced.project(t - 2 * step * (Hr @ t))
            nn = np.linalg.norm(t_new)
            if nn < 1e-12:
                break
            t_new = t_new / nn
            if np.linalg.norm(t_new - t) < 1e-12:
                t = t_new
                break
            t = t_new
        val = float(t @ Hr @ t)
        if val < best_val:
            best_val, best_t = val, t
    if best_t is None:
        return math.inf, None, False
    d = N @ best_t
    return best_val, d / np.linalg.norm(d), False
