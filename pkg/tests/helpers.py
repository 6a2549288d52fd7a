"""Shared generators for randomized tests."""
import numpy as np
from scipy.linalg import null_space

from bilevel_soc.expr import Const, Var, func, power
from bilevel_soc.problem import problem_from_dict


def random_expr(rng, names, depth=3):
    """Random expression tree over ``names`` using every node type."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return Var(str(rng.choice(names)))
        return Const(float(np.round(rng.uniform(-2, 2), 3)))
    a = random_expr(rng, names, depth - 1)
    op = rng.integers(0, 9)
    if op == 0:
        return a + random_expr(rng, names, depth - 1)
    if op == 1:
        return a - random_expr(rng, names, depth - 1)
    if op == 2:
        return a * random_expr(rng, names, depth - 1)
    if op == 3:
        return a / (Const(1.5) + random_expr(rng, names, depth - 1))
    if op == 4:
        return a ** int(rng.integers(2, 4))
    if op == 5:
        return -a
    if op == 6:
        return func(str(rng.choice(["sin", "cos"])), a)
    if op == 7:
        # keep exp arguments moderate and log/sqrt/pow arguments positive
        return func("exp", func("sin", a))
    base = Const(2.0) + func("cos", a)
    choice = rng.integers(0, 3)
    if choice == 0:
        return func("log", base)
    if choice == 1:
        return func("sqrt", base)
    return power(base, Const(float(np.round(rng.uniform(0.3, 2.7), 2))))


def richardson(e, env, var, h=1e-3):
    """Fourth-order central difference of e in ``var``."""
    def at(t):
        pt = dict(env)
        pt[var] = env[var] + t
        return e.evaluate(pt)
    d1 = (at(h) - at(-h)) / (2 * h)
    d2 = (at(h / 2) - at(-h / 2)) / h
    return (4 * d2 - d1) / 3


def random_slack_instance(rng):
    """Lower level with a known KKT pair satisfying the weak second-order condition.

    Linear-plus-quadratic constraints, quadratic-plus-quartic objective.  The
    objective's linear term makes (y*, u) stationary and its quadratic part is
    made positive semidefinite on the critical subspace, while being left
    indefinite on the constraint normals.
    """
    m = int(rng.integers(1, 4))
    p = int(rng.integers(0, 4))
    ystar = rng.uniform(-0.5, 0.5, m)
    n_act = int(rng.integers(0, min(p, m) + 1))
    A = rng.standard_normal((p, m))
    C = [np.diag(rng.uniform(-0.5, 0.5, m)) for _ in range(p)]
    c = np.where(np.arange(p) < n_act, 0.0, rng.uniform(0.2, 1.0, p))
    u = np.zeros(p)
    for i in range(n_act):
        u[i] = 0.0 if rng.random() < 0.25 else rng.uniform(0.1, 2.0)
    w = rng.uniform(0.0, 0.5, m)
    Q = rng.standard_normal((m, m))
    Q = 0.5 * (Q + Q.T)
    H = Q + sum((ui * Ci for ui, Ci in zip(u, C)), np.zeros((m, m))) + np.diag(12 * w * ystar ** 2)
    N = null_space(A[:n_act]) if n_act else np.eye(m)
    if N.shape[1]:
        lam = np.linalg.eigvalsh(N.T @ H @ N).min()
        if lam < 0.1:
            Q = Q + (0.1 - lam) * N @ N.T
    dy = [f"(y{k + 1} - ({float(ystar[k])!r}))" for k in range(m)]
    # gradient of the quartic part at y* is 4 w y*^3; cancel it and the multiplier term
    b = -A.T @ u - 4 * w * ystar ** 3
    terms = [f"({float(b[k])!r})*{dy[k]}" for k in range(m)]
    terms += [f"0.5*({float(Q[a, bb])!r})*{dy[a]}*{dy[bb]}" for a in range(m) for bb in range(m)]
    terms += [f"({float(w[k])!r})*y{k + 1}^4" for k in range(m)]
    g = []
    for i in range(p):
        lin = " + ".join(f"({float(A[i, k])!r})*{dy[k]}" for k in range(m))
        quad = " + ".join(f"0.5*({float(C[i][k, k])!r})*{dy[k]}^2" for k in range(m))
        g.append(f"{lin} + {quad} - ({float(c[i])!r})")
    data = {"n": 1, "m": m, "p": p, "q": 0, "F": "x1", "f": " + ".join(terms) + " + 0*x1",
            "g": g, "G": [], "x_box": [[-1, 1]], "y_box": [[-3, 3]] * m}
    return problem_from_dict(data), np.zeros(1), ystar, u
