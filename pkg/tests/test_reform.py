import numpy as np
import pytest

from bilevel_soc import reform
from bilevel_soc.problem import bundled_problem

KINDS = [k.value for k in reform.ReformKind]


def _env(gcp, z):
    return dict(zip(gcp.var_names, z))


def test_cp_rows_two_leader_example(ex46):
    cp = reform.build(ex46, "CP")
    assert cp.var_names == ("x1", "x2", "y1", "u1", "u2")
    assert cp.H_labels[0] == "grad_y L[1]" and cp.H_cone[0] == "zero"
    assert cp.H_labels[1:] == ("G1", "G2", "G3", "G4")
    rng = np.random.default_rng(0)
    for z in rng.uniform(-1, 1, (10, 5)):
        x1, x2, y, u1, u2 = z
        assert cp.H[0].evaluate(_env(cp, z)) == pytest.approx(y ** 3 - (x1 + x2) * y - u1 + u2, abs=1e-14)
    assert [i for i, _ in cp.comp_pairs] == [0, 1]


def test_basic_relaxed_rows(ex46):
    rb = reform.build(ex46, "R_BSOCP")
    rng = np.random.default_rng(1)
    lab = rb.H_labels
    for z in rng.uniform(-1, 1, (10, rb.dim)):
        x1, x2, y, u1, u2, d = z
        env = _env(rb, z)
        assert rb.H[lab.index("u1 grad_y g1'd")].evaluate(env) == pytest.approx(-u1 * d)
        assert rb.H[lab.index("u2 grad_y g2'd")].evaluate(env) == pytest.approx(u2 * d)
        assert rb.H[lab.index("-d'H(L)d")].evaluate(env) == pytest.approx(-(3 * y * y - x1 - x2) * d * d)
    assert rb.H_cone[lab.index("-d'H(L)d")] == "nonpos"


def test_cp_without_lower_constraints(ex31):
    cp = reform.build(ex31, "CP")
    assert cp.H_labels == ("grad_y L[1]",) and not cp.comp_pairs and cp.var_names == ("x1", "y1")


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_builds_for_every_example(kind):
    for eid in ("3.1", "4.6", "4.8"):
        prob = bundled_problem(eid)
        if kind == "CPSOC" and prob.p:
            with pytest.raises(ValueError):
                reform.program(prob, kind)
            continue
        gcp = reform.program(prob, kind)
        assert len(gcp.H) == len(gcp.H_cone) == len(gcp.H_labels)
        z = reform.default_candidate(gcp)
        assert z.shape == (gcp.dim,)


def test_membership_kinds_refuse_build(ex31):
    with pytest.raises(ValueError):
        reform.build(ex31, "SOCP_B")
    with pytest.raises(ValueError):
        reform.membership_program(ex31, "CP")


@pytest.mark.parametrize("mu", [0.0, 1.0, 4.0, 40.0])
@pytest.mark.parametrize("k", [2, 5, 17])
def test_penalized_objective_simple_example(ex31, mu, k):
    pen = reform.penalize(reform.build(ex31, "CP"), mu)
    val = reform.objective_value(pen, [1 / k, 0.0])
    assert val == pytest.approx(k ** -2 - 1 / k + mu / 4 * k ** -2 + 0.25, abs=1e-12)


@pytest.mark.parametrize("mu", [0.0, 3.0, 100.0])
@pytest.mark.parametrize("k", [3, 60])
def test_penalized_objective_two_leader_example(ex46, mu, k):
    pen = reform.penalize(reform.build(ex46, "CP"), mu)
    assert reform.objective_value(pen, [1 / k, 1 / k, 0, 0, 0]) == pytest.approx(-2 / k + mu / k ** 2, abs=1e-12)


def test_zero_penalty_is_upper_objective(ex48):
    cp = reform.build(ex48, "CP")
    pen = reform.penalize(cp, 0.0)
    z = [0.3, 0.2, 0.0, 0.0]
    assert reform.objective_value(pen, z) == pytest.approx(ex48.eval_F([0.3], [0.2]))


def test_penalty_validation(ex31):
    cp = reform.build(ex31, "CP")
    with pytest.raises(ValueError):
        reform.penalize(cp, -1.0)
    with pytest.raises(ValueError):
        reform.penalize(reform.penalize(cp, 1.0), 1.0)


def test_value_program_feasibility(ex31):
    vp = reform.build(ex31, "VP")
    ok, res = reform.feasible(vp, [0.0, 0.0])
    assert ok and res["value_gap"] == 0.0
    ok, res = reform.feasible(vp, [0.25, 0.0])
    assert not ok and res["value_gap"] == pytest.approx(0.015625, abs=1e-9)


def test_negative_multiplier_is_infeasible(ex46):
    cp = reform.build(ex46, "CP")
    ok, res = reform.feasible(cp, [0.0, 0.0, 0.0, -0.5, 0.0])
    assert not ok and res["complementarity"] > 0


def test_perturbation_zero_at_feasible_point(ex46):
    cp = reform.build(ex46, "CP")
    assert reform.perturbation(cp, reform.default_candidate(cp))["norm"] == 0.0
    p = reform.perturbation(cp, [0.2, 0.0, 0.1, 0.0, 0.0])
    assert p["norm"] > 0


def test_sigma_sets_two_leader_example(ex46):
    s = np.sqrt
    assert reform.sigma_membership(ex46, "KKT", [0.3, 0.2], [0.0])
    assert reform.sigma_membership(ex46, "KKT", [-0.3, 0.2], [0.0])
    assert reform.sigma_membership(ex46, "KKT", [0.3, 0.2], [s(0.5)])
    assert not reform.sigma_membership(ex46, "KKT", [0.3, 0.2], [0.3])
    assert not reform.sigma_membership(ex46, "SSOC", [0.3, 0.2], [0.0])
    assert reform.sigma_membership(ex46, "SSOC", [0.3, 0.2], [s(0.5)])
    assert reform.sigma_membership(ex46, "WSOC", [0.3, 0.2], [0.0])
    with pytest.raises(ValueError):
        reform.sigma_membership(ex46, "XYZ", [0, 0], [0])


def test_sigma_weak_equals_graph_third_example(ex48):
    rows = reform.membership_grid(ex48, [[x] for x in np.linspace(-1, 1, 9)], kinds=("WSOC", "KKT"))
    assert rows and all(r["WSOC"] == r["gph"] for r in rows)
    assert any(r["KKT"] and not r["WSOC"] for r in rows)


def test_point_from_blocks(ex46):
    rb = reform.build(ex46, "R_BSOCP")
    z = reform.point_from_blocks(rb, {"d": [2.0]})
    assert rb.block(z, "d").tolist() == [2.0] and rb.block(z, "x").tolist() == [0.0, 0.0]
    # a short multiplier block is replaced by a computed multiplier
    z = reform.point_from_blocks(rb, {"x": [0, 0], "y": [0], "u": [0], "d": [1]})
    assert rb.block(z, "u").tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        reform.point_from_blocks(rb, {"x": [0, 0, 0], "y": [0]})


def test_side_conditions(ex31, ex48):
    cpsoc = reform.build(ex31, "CPSOC")
    assert reform.side_condition_holds(cpsoc, [0.0, 0.0])
    assert not reform.side_condition_holds(cpsoc, [1.0, 0.0])
    wz = reform.build(ex48, "WSOCPZ")
    assert reform.side_condition_holds(wz, reform.default_candidate(wz))
